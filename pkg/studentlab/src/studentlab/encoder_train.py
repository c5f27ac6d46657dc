"""Optional contrastive fine-tuning of a retrieval encoder from the
pipeline's exported training pairs.

Input is the pair TSV (uid, surface, context, entity_id, label) with one
positive and a set of hard/random negatives per mention. Each step scores the
mention [CLS] vector against its candidate entities' [CLS] vectors by inner
product and applies a softmax cross-entropy loss with the positive as target
(production recipe: learning rate 2e-6, 40 epochs, context budget 256).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from transformers import AutoModel, AutoTokenizer

from . import records


@dataclass
class EncoderTrainConfig:
    encoder_dir: str
    pairs_path: str
    kb_path: str
    output_dir: str
    learning_rate: float = 2e-6
    epochs: int = 40
    batch_size: int = 2  # mentions per step
    max_length: int = 256
    seed: int = 0


def load_pairs(path) -> dict[str, dict]:
    """Group the TSV rows by mention uid: {uid: {text, pos, negs}}."""
    groups: dict[str, dict] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ValueError(f"{path}:{line_no}: expected 5 columns")
        uid, surface, context, entity_id, label = cols
        group = groups.setdefault(uid, {"text": f"{surface} {context}".strip(), "pos": None, "negs": []})
        if label == "pos":
            group["pos"] = entity_id
        elif label in ("hard_neg", "rand_neg"):
            group["negs"].append(entity_id)
        else:
            raise ValueError(f"{path}:{line_no}: unknown label {label!r}")
    for uid, group in groups.items():
        if group["pos"] is None:
            raise ValueError(f"mention {uid} has no positive row")
    return groups


def train_encoder(config: EncoderTrainConfig) -> dict:
    torch.manual_seed(config.seed)
    tokenizer = AutoTokenizer.from_pretrained(config.encoder_dir)
    model = AutoModel.from_pretrained(config.encoder_dir)
    model.train()

    names = records.load_kb_names(config.kb_path)
    groups = list(load_pairs(config.pairs_path).items())
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    rng = random.Random(config.seed)

    def cls(texts):
        batch = tokenizer(texts, return_tensors="pt", padding=True, truncation=True,
                          max_length=config.max_length)
        return model(**batch).last_hidden_state[:, 0, :]

    losses = []
    for _epoch in range(config.epochs):
        rng.shuffle(groups)
        for start in range(0, len(groups), config.batch_size):
            chunk = groups[start : start + config.batch_size]
            loss = 0.0
            for _uid, group in chunk:
                candidates = [group["pos"]] + group["negs"]
                mention_vec = cls([group["text"]])                     # (1, h)
                entity_vecs = cls([names[eid] for eid in candidates])  # (1+n, h)
                scores = mention_vec @ entity_vecs.T                   # (1, 1+n)
                loss = loss + F.cross_entropy(scores, torch.zeros(1, dtype=torch.long))
            loss = loss / len(chunk)
            loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            losses.append(float(loss.item()))

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    summary = {"mentions": len(groups), "steps": len(losses),
               "initial_loss": losses[0], "final_loss": losses[-1], "output": str(out_dir)}
    with open(out_dir / "train_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return summary
