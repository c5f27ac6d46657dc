"""Turn raw model output into a validated permutation of the candidate set.

Matching runs a cascade per line: exact string, then case/whitespace
normalized, then punctuation stripped. Anything beyond that (edit distance,
substring guessing) is deliberately out: binding a line to the wrong candidate
is worse than dropping it. Repairs make the result a total order no matter
what the model produced: duplicates keep their first occurrence, unmatched
lines are dropped, missing candidates are appended in retrieval order. The
``clean`` flag is true only when no repair fired, i.e. the raw text already
was an exact, complete permutation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import UnparseableRankingError, ValidationError

REPAIR_APPENDED = "appended_missing"
REPAIR_DROPPED = "dropped_unknown"
REPAIR_DEDUP = "deduplicated"
REPAIR_FUZZY = "fuzzy_matched"


@dataclass
class RankedList:
    mention_uid: str
    order: list[str]  # entity ids, most probable first
    repairs: list[str] = field(default_factory=list)
    clean: bool = True


# "1. x", "2) x", "(3) x", "4: x", "- x", "* x", "• x"
_MARKER = re.compile(r"^\s*(?:[-*•]+|\(?\d{1,4}\)|\d{1,4}[.):\]])\s+")
_WS = re.compile(r"\s+")
_PUNCT = re.compile(r"[^\w\s]+", re.UNICODE)


def _strip_marker(line: str) -> str:
    return _MARKER.sub("", line, count=1).strip()


def _norm_ws(s: str) -> str:
    return _WS.sub(" ", s).strip().casefold()


def _norm_punct(s: str) -> str:
    return _WS.sub(" ", _PUNCT.sub(" ", s)).strip().casefold()


def _unambiguous(keys: list[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    dropped = set()
    for i, key in enumerate(keys):
        if key in out or key in dropped:
            out.pop(key, None)
            dropped.add(key)
        else:
            out[key] = i
    return out


def parse_ranked(raw_text: str, candidate_labels: list[str], candidate_ids: list[str], mention_uid: str = "") -> RankedList:
    if len(candidate_labels) != len(candidate_ids) or not candidate_ids:
        raise ValidationError(f"{len(candidate_labels)} labels vs {len(candidate_ids)} ids (need >= 1, equal)")

    exact = {label: i for i, label in enumerate(candidate_labels)}
    by_ws = _unambiguous([_norm_ws(label) for label in candidate_labels])
    by_punct = _unambiguous([_norm_punct(label) for label in candidate_labels])

    order_idx: list[int] = []
    taken: set[int] = set()
    repairs: list[str] = []
    matched_any = False

    for line in raw_text.splitlines():
        body = _strip_marker(line)
        if not body:
            continue
        idx = exact.get(body)
        fuzzy = False
        if idx is None:
            idx = by_ws.get(_norm_ws(body))
            fuzzy = idx is not None
        if idx is None:
            idx = by_punct.get(_norm_punct(body))
            fuzzy = idx is not None
        if idx is None:
            repairs.append(REPAIR_DROPPED)
            continue
        matched_any = True
        if idx in taken:
            repairs.append(REPAIR_DEDUP)
            continue
        if fuzzy:
            repairs.append(REPAIR_FUZZY)
        taken.add(idx)
        order_idx.append(idx)

    if not matched_any:
        raise UnparseableRankingError(
            f"no candidate matched in model output for {mention_uid or 'mention'} ({len(candidate_ids)} candidates)"
        )

    for i in range(len(candidate_ids)):
        if i not in taken:
            order_idx.append(i)
            repairs.append(REPAIR_APPENDED)

    return RankedList(
        mention_uid=mention_uid,
        order=[candidate_ids[i] for i in order_idx],
        repairs=repairs,
        clean=not repairs,
    )


def top1(ranked: RankedList) -> str:
    if not ranked.order:
        raise ValidationError("empty ranking")
    return ranked.order[0]
