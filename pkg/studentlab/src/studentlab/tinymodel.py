"""Build small causal-LM and encoder models locally.

The sandbox/test environment has no model-hub access, so fixtures are
constructed from scratch: a byte-level BPE tokenizer trained on the task
corpus, a small randomly initialized GPT-2, and an optional warm-up pass that
teaches the base model the task format before any adapter training."""

from __future__ import annotations

import random
from pathlib import Path

import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, processors, trainers
from transformers import (
    AutoTokenizer,
    BertConfig,
    BertModel,
    GPT2Config,
    GPT2LMHeadModel,
    PreTrainedTokenizerFast,
)


def build_tokenizer(texts, vocab_size: int = 800, with_cls: bool = False) -> PreTrainedTokenizerFast:
    tok = Tokenizer(models.BPE(unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    special = ["<unk>", "<pad>", "<eos>"] + (["[CLS]", "[SEP]"] if with_cls else [])
    tok.train_from_iterator(texts, trainers.BpeTrainer(vocab_size=vocab_size, special_tokens=special))
    if with_cls:
        tok.post_processor = processors.TemplateProcessing(
            single="[CLS] $A [SEP]",
            pair="[CLS] $A [SEP] $B [SEP]",
            special_tokens=[("[CLS]", tok.token_to_id("[CLS]")), ("[SEP]", tok.token_to_id("[SEP]"))],
        )
    kwargs = dict(unk_token="<unk>", pad_token="<pad>", eos_token="<eos>")
    if with_cls:
        kwargs.update(cls_token="[CLS]", sep_token="[SEP]")
    return PreTrainedTokenizerFast(tokenizer_object=tok, **kwargs)


def build_causal_lm(tokenizer, n_embd: int = 128, n_layer: int = 2, n_head: int = 4,
                    n_positions: int = 512, seed: int = 0) -> GPT2LMHeadModel:
    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(tokenizer), n_positions=n_positions, n_embd=n_embd,
        n_layer=n_layer, n_head=n_head,
        bos_token_id=tokenizer.eos_token_id, eos_token_id=tokenizer.eos_token_id,
        pad_token_id=tokenizer.pad_token_id,
    )
    return GPT2LMHeadModel(config)


def build_encoder(tokenizer, hidden: int = 32, layers: int = 2, heads: int = 2,
                  seed: int = 0) -> BertModel:
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(tokenizer), hidden_size=hidden, num_hidden_layers=layers,
        num_attention_heads=heads, intermediate_size=hidden * 2,
        max_position_embeddings=512, pad_token_id=tokenizer.pad_token_id,
    )
    return BertModel(config)


def encode_for_lm(tokenizer, instruction: str, output: str) -> tuple[list[int], list[int]]:
    """(input_ids, labels) with the prompt masked out of the loss. The
    newline separating instruction from output belongs to the completion, so
    a served model fed the bare instruction starts exactly where training
    left off."""
    prompt = tokenizer(instruction).input_ids
    target = tokenizer("\n" + output).input_ids + [tokenizer.eos_token_id]
    return prompt + target, [-100] * len(prompt) + target


def lm_fit(model, tokenizer, pairs, *, epochs: int, lr: float, batch_size: int = 8,
           parameters=None, seed: int = 99, log=None, stop_below: float | None = None) -> list[float]:
    """Teach the model the (instruction -> output) pairs; loss is taken on the
    output tokens only. Trains whatever parameters require grad unless an
    explicit list is given. Stops early once an epoch's mean loss drops below
    ``stop_below``. Returns per-step losses."""
    data = [encode_for_lm(tokenizer, i, o) for i, o in pairs]
    parameters = parameters if parameters is not None else [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(parameters, lr=lr)
    rng = random.Random(seed)
    pad = tokenizer.pad_token_id
    losses: list[float] = []
    model.train()
    for epoch in range(epochs):
        order = list(data)
        rng.shuffle(order)
        epoch_losses = []
        for i in range(0, len(order), batch_size):
            chunk = order[i : i + batch_size]
            width = max(len(ids) for ids, _ in chunk)
            input_ids = torch.full((len(chunk), width), pad, dtype=torch.long)
            labels = torch.full((len(chunk), width), -100, dtype=torch.long)
            attention = torch.zeros((len(chunk), width), dtype=torch.long)
            for row, (ids, lab) in enumerate(chunk):
                input_ids[row, : len(ids)] = torch.tensor(ids)
                labels[row, : len(lab)] = torch.tensor(lab)
                attention[row, : len(ids)] = 1
            loss = model(input_ids=input_ids, attention_mask=attention, labels=labels).loss
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            losses.append(float(loss.item()))
            epoch_losses.append(losses[-1])
            if log is not None:
                log(f"epoch {epoch + 1}/{epochs} step {len(losses)} loss {losses[-1]:.4f}")
        if stop_below is not None and sum(epoch_losses) / len(epoch_losses) < stop_below:
            break
    return losses


def save_base(model, tokenizer, directory) -> None:
    directory = Path(directory)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)


def load_tokenizer(directory):
    return AutoTokenizer.from_pretrained(str(directory))
