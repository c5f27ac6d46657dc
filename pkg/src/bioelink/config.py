"""Pipeline configuration: a JSON file with paths/retrieval/generation/eval
sections, overridable flag by flag on the command line (flags win).

Retrieval and generation defaults are the production settings: k=6,
15 negatives with 10% hard, temperature 0, context window 256 characters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

DEFAULT_ACC_KS = (1, 5)


@dataclass
class PipelineConfig:
    # paths
    kb: str | None = None
    mentions: str | None = None
    mention_format: str = "normalized-tsv"
    entity_embeddings: str | None = None
    mention_embeddings: str | None = None
    cache_dir: str | None = None
    teacher_template: str | None = None
    student_template: str | None = None
    price_table: str | None = None
    out_dir: str = "out"
    # retrieval
    k: int = 6
    metric: str = "dot"
    negatives: int = 15
    hard_ratio: float = 0.10
    seed: int = 0
    # generation
    backend: str = "mock:identity"
    model: str = "mock-teacher"
    endpoint: str | None = None
    temperature: float = 0.0
    limit: int | None = None
    filter_policy: str = "drop-unparseable-only"
    parallelism: int = 1
    rate_limit: float | None = None
    max_output: int = 512
    max_context_chars: int = 256
    # eval
    acc_ks: list[int] = field(default_factory=lambda: list(DEFAULT_ACC_KS))
    strict_gold: bool = False

    def config_hash(self) -> str:
        canon = json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


_SECTION_FIELDS = {
    "paths": ("kb", "mentions", "mention_format", "entity_embeddings", "mention_embeddings",
              "cache_dir", "teacher_template", "student_template", "price_table", "out_dir"),
    "retrieval": ("k", "metric", "negatives", "hard_ratio", "seed"),
    "generation": ("backend", "model", "endpoint", "temperature", "limit", "filter_policy",
                   "parallelism", "rate_limit", "max_output", "max_context_chars"),
    "eval": ("acc_ks", "strict_gold"),
}

_PATH_FIELDS = ("kb", "mentions", "entity_embeddings", "mention_embeddings",
                "teacher_template", "student_template", "price_table")


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    config = PipelineConfig()
    base = Path(path).parent
    for section, fields in _SECTION_FIELDS.items():
        block = raw.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, value in block.items():
            if key not in fields:
                raise ConfigError(f"unknown config field {section}.{key}")
            if key in _PATH_FIELDS and value is not None:
                value = str((base / value)) if not Path(value).is_absolute() else value
            if key == "out_dir" and value is not None and not Path(value).is_absolute():
                value = str(base / value)
            setattr(config, key, value)
    return config


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown config field {key!r}")
        setattr(config, key, value)
    return config


def require_paths(config: PipelineConfig, *names: str) -> None:
    """Fail fast (exit code 2) when a subcommand needs a path that is unset or
    does not exist; the message names the field."""
    for name in names:
        value = getattr(config, name)
        if value is None:
            raise ConfigError(f"required path {name!r} is not configured (set it in the config file or pass --{name.replace('_', '-')})")
        if not Path(value).exists():
            raise ConfigError(f"configured path {name!r} does not exist: {value}")
