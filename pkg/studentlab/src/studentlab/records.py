"""Readers for the pipeline's file interfaces.

The training dataset is JSONL with keys ``instruction`` (prompt text ending in
a numbered candidate list), ``output`` (newline-joined ranking, a permutation
of those candidates) and ``meta``. The knowledge base is ``id<TAB>name`` TSV;
mentions are ``gold_id<TAB>mention<TAB>context?`` TSV with uids assigned as
``{split}:{line_no}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path


@dataclass
class TrainRecord:
    instruction: str
    output: str
    meta: dict


_NUMBERED = re.compile(r"^\s*\d+[.)]\s+(.*\S)\s*$")


def candidate_block(instruction: str) -> list[str]:
    """Last contiguous run of numbered lines — the candidate list."""
    best, current = [], []
    for line in instruction.splitlines():
        m = _NUMBERED.match(line)
        if m:
            current.append(m.group(1))
        else:
            if current:
                best = current
            current = []
    return current or best


def load_dataset(path) -> list[TrainRecord]:
    """Read and sanity-check a dataset file before training on it: every
    record must carry the three keys and an output that permutes the
    candidates named in its instruction."""
    records: list[TrainRecord] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{line_no}: bad JSON: {exc}") from exc
        missing = [k for k in ("instruction", "output", "meta") if k not in raw]
        if missing:
            raise ValueError(f"{path}:{line_no}: missing keys {missing}")
        candidates = candidate_block(raw["instruction"])
        output_lines = raw["output"].split("\n")
        if sorted(output_lines) != sorted(candidates):
            raise ValueError(f"{path}:{line_no}: output is not a permutation of the instruction's candidates")
        records.append(TrainRecord(instruction=raw["instruction"], output=raw["output"], meta=raw["meta"]))
    if not records:
        raise ValueError(f"{path}: empty dataset")
    return records


def load_kb_names(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        cols = line.split("\t")
        if len(cols) != 2:
            raise ValueError(f"{path}:{line_no}: expected id<TAB>name")
        out[cols[0]] = cols[1]
    return out


def load_mention_texts(path, split: str) -> list[tuple[str, str, str | None]]:
    """(uid, surface, context) rows from a normalized mention TSV."""
    rows = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise ValueError(f"{path}:{line_no}: expected 2 or 3 columns")
        context = cols[2] if len(cols) == 3 and cols[2] else None
        rows.append((f"{split}:{line_no}", cols[1], context))
    return rows
