"""LoRA fine-tuning of a student model on the teacher-generated dataset.

The base model's weights stay frozen; only the low-rank adapter increment is
trained and saved. Defaults follow the production recipe (rank 8, alpha 16,
dropout 0.05, batch 8); two learning-rate presets are provided: the
medical-Chinese-style config (3e-4, 10 epochs) and the Llama-2-style config
(3e-5, 5 epochs).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from . import lora, records, tinymodel

DEFAULT_TARGETS = ["attn.c_attn", "attn.c_proj", "mlp.c_fc", "mlp.c_proj", "lm_head"]

PRESETS = {
    "bentsao-style": {"learning_rate": 3e-4, "epochs": 10},
    "llama2-style": {"learning_rate": 3e-5, "epochs": 5},
}


@dataclass
class TrainerConfig:
    base_model: str  # local model directory
    dataset_path: str
    output_dir: str
    learning_rate: float = 3e-4
    epochs: int = 10
    batch_size: int = 8
    lora_rank: int = 8
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    target_modules: list[str] = field(default_factory=lambda: list(DEFAULT_TARGETS))
    seed: int = 0
    # optional low-rate tail that polishes convergence after the main phase
    cooldown_learning_rate: float | None = None
    cooldown_epochs: int = 0

    def __post_init__(self):
        if self.lora_rank < 1:
            raise ValueError(f"lora_rank must be >= 1, got {self.lora_rank}")

    @classmethod
    def from_preset(cls, name: str, **kwargs) -> "TrainerConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        merged = dict(PRESETS[name])
        merged.update(kwargs)
        return cls(**merged)


def train(config: TrainerConfig) -> dict:
    """Fine-tune adapters on the dataset and save them (plus a step-by-step
    loss log) under ``config.output_dir``. Returns a small summary dict."""
    dataset = records.load_dataset(config.dataset_path)
    tokenizer = AutoTokenizer.from_pretrained(config.base_model)
    model = AutoModelForCausalLM.from_pretrained(config.base_model)
    frozen_before = {name: p.detach().clone() for name, p in model.named_parameters()}

    wrapped = lora.apply_lora(model, config.target_modules, rank=config.lora_rank,
                              alpha=config.lora_alpha, dropout=config.lora_dropout)
    trainable = lora.adapter_parameters(model)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.txt"
    with open(log_path, "w", encoding="utf-8") as log_file:
        def log(line):
            log_file.write(line + "\n")

        log(f"records={len(dataset)} wrapped={len(wrapped)} "
            f"trainable_params={sum(p.numel() for p in trainable)}")
        pairs = [(r.instruction, r.output) for r in dataset]
        losses = tinymodel.lm_fit(
            model, tokenizer, pairs, epochs=config.epochs, lr=config.learning_rate,
            batch_size=config.batch_size, parameters=trainable, seed=config.seed, log=log,
        )
        if config.cooldown_epochs and config.cooldown_learning_rate:
            log(f"cooldown lr={config.cooldown_learning_rate} epochs={config.cooldown_epochs}")
            losses += tinymodel.lm_fit(
                model, tokenizer, pairs, epochs=config.cooldown_epochs,
                lr=config.cooldown_learning_rate, batch_size=config.batch_size,
                parameters=trainable, seed=config.seed + 1, log=log,
            )
        log(f"final_loss={losses[-1]:.4f} initial_loss={losses[0]:.4f}")

    # the adapter must carry the whole fine-tune: base weights are untouched
    for name, p in model.named_parameters():
        if ".lora_" in name:
            continue
        reference = frozen_before[name.replace(".base.", ".") if ".base." in name else name]
        if not torch.equal(p.detach(), reference):
            raise AssertionError(f"base weight {name} changed during adapter training")

    lora.save_adapter(model, out_dir, {
        "targets": config.target_modules,
        "rank": config.lora_rank,
        "alpha": config.lora_alpha,
        "dropout": config.lora_dropout,
        "base_model": str(config.base_model),
        "trainer": {k: v for k, v in asdict(config).items() if k != "target_modules"},
    })
    return {
        "records": len(dataset),
        "steps": len(losses),
        "initial_loss": losses[0],
        "final_loss": losses[-1],
        "adapter_dir": str(out_dir),
        "log": str(log_path),
    }
