"""Low-rank adapter injection without external fine-tuning frameworks.

A wrapped layer computes ``base(x) + x @ A^T @ B^T * (alpha / rank)`` with the
base weights frozen; B starts at zero so the wrapped model is initially
identical to the base. Works for ``nn.Linear`` and the transformers ``Conv1D``
used by GPT-2 blocks (both map (..., in) -> (..., out))."""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch
import torch.nn as nn

ADAPTER_WEIGHTS = "adapter_weights.pt"
ADAPTER_CONFIG = "adapter_config.json"


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Module, rank: int, alpha: float, dropout: float):
        super().__init__()
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        in_features, out_features = _io_features(base)
        self.base = base
        self.lora_a = nn.Parameter(torch.randn(rank, in_features) / math.sqrt(in_features))
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.base(x) + self.dropout(x) @ self.lora_a.T @ self.lora_b.T * self.scaling


def _io_features(module: nn.Module) -> tuple[int, int]:
    if isinstance(module, nn.Linear):
        return module.in_features, module.out_features
    if type(module).__name__ == "Conv1D":  # transformers GPT-2 projection, weight (in, out)
        return module.weight.shape[0], module.weight.shape[1]
    raise TypeError(f"cannot adapt module of type {type(module).__name__}")


def apply_lora(model: nn.Module, target_suffixes: list[str], rank: int, alpha: float, dropout: float) -> list[str]:
    """Freeze the whole model, then wrap every module whose dotted name ends
    with one of ``target_suffixes``. Returns the wrapped module names."""
    for p in model.parameters():
        p.requires_grad = False
    wrapped = []
    for name, module in list(model.named_modules()):
        if not any(name == t or name.endswith("." + t) for t in target_suffixes):
            continue
        if isinstance(module, LoRALinear):
            continue
        parent = model.get_submodule(name.rsplit(".", 1)[0]) if "." in name else model
        attr = name.rsplit(".", 1)[-1]
        setattr(parent, attr, LoRALinear(module, rank=rank, alpha=alpha, dropout=dropout))
        wrapped.append(name)
    if not wrapped:
        raise ValueError(f"no modules matched targets {target_suffixes}")
    return wrapped


def adapter_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]


def adapter_state_dict(model: nn.Module) -> dict:
    return {name: tensor for name, tensor in model.state_dict().items() if ".lora_" in name}


def save_adapter(model: nn.Module, directory, config: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(adapter_state_dict(model), directory / ADAPTER_WEIGHTS)
    with open(directory / ADAPTER_CONFIG, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


def load_adapter(model: nn.Module, directory) -> dict:
    """Wrap the (base) model per the stored adapter config and load weights."""
    directory = Path(directory)
    config = json.loads((directory / ADAPTER_CONFIG).read_text(encoding="utf-8"))
    apply_lora(model, config["targets"], rank=config["rank"], alpha=config["alpha"], dropout=0.0)
    state = torch.load(directory / ADAPTER_WEIGHTS, map_location="cpu", weights_only=True)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise ValueError(f"adapter does not fit this base model: unexpected keys {unexpected[:3]}")
    leftover = [k for k in missing if ".lora_" in k]
    if leftover:
        raise ValueError(f"adapter is missing weights for {leftover[:3]}")
    return config
