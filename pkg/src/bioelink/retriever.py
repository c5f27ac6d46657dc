"""Exact top-k candidate retrieval over the embedding store, plus negative
mining and training-pair export for external encoder training.

Scores are raw inner products by default ("dot"); "cosine" is available for
encoders trained with normalized objectives. Ranking ties are broken by
knowledge-base position so results are deterministic regardless of how the
scan is blocked.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .corpus import KnowledgeBase, Mention
from .embedstore import EmbeddingStore, lookup
from .errors import InsufficientPopulationError, ValidationError

METRICS = ("dot", "cosine")


@dataclass
class CandidateSet:
    mention_uid: str
    candidates: list[tuple[str, float]]  # (entity_id, score), score non-increasing
    k: int
    metric: str

    @property
    def entity_ids(self) -> list[str]:
        return [eid for eid, _ in self.candidates]


@dataclass(frozen=True)
class NegativeSample:
    mention_uid: str
    entity_id: str
    kind: str  # "hard" | "random"


def score(mention_vec, entity_vec, metric: str = "dot") -> float:
    m = np.asarray(mention_vec, dtype=np.float32)
    e = np.asarray(entity_vec, dtype=np.float32)
    if m.shape != e.shape or m.ndim != 1:
        raise ValidationError(f"vector shape mismatch: {m.shape} vs {e.shape}")
    if metric == "dot":
        return float(m @ e)
    if metric == "cosine":
        mn, en = float(np.linalg.norm(m)), float(np.linalg.norm(e))
        if mn == 0.0 or en == 0.0:
            raise ValidationError("cosine is undefined for a zero vector")
        return float(m @ e) / (mn * en)
    raise ValidationError(f"unknown metric {metric!r}")


class CandidateRetriever:
    """Scores one mention vector against every entity and returns the exact
    top-k. Construction fails if any KB entity lacks a vector, so retrieval
    over incomplete coverage is impossible.

    The scan runs over fixed-size entity blocks, keeping each block's local
    top-k, then merges the pools; the KB-position tie rule is applied both
    inside blocks (stable sort) and at the merge, so the result is identical
    to a sequential full scan.
    """

    def __init__(self, store: EmbeddingStore, kb: KnowledgeBase, metric: str = "dot", block_size: int = 1024):
        if metric not in METRICS:
            raise ValidationError(f"unknown metric {metric!r}")
        missing = [ent.id for ent in kb if ent.id not in store]
        if missing:
            shown = ", ".join(missing[:5]) + ("…" if len(missing) > 5 else "")
            raise ValidationError(f"{len(missing)} knowledge-base entities have no vector: {shown}")
        rows = np.array([store.row(ent.id) for ent in kb], dtype=np.intp)
        self.matrix = store.vectors[rows]  # (N, dim), KB order
        self.kb = kb
        self.metric = metric
        self.block_size = max(1, block_size)
        if metric == "cosine":
            norms = np.linalg.norm(self.matrix, axis=1)
            zero = np.where(norms == 0.0)[0]
            if zero.size:
                raise ValidationError(f"cosine is undefined: entity {kb.entities[int(zero[0])].id!r} has a zero vector")
            self.matrix = self.matrix / norms[:, None]

    def scores(self, mention_vec) -> np.ndarray:
        m = np.asarray(mention_vec, dtype=np.float32)
        if m.shape != (self.matrix.shape[1],):
            raise ValidationError(f"mention vector has dim {m.shape}, entities have dim {self.matrix.shape[1]}")
        if self.metric == "cosine":
            norm = float(np.linalg.norm(m))
            if norm == 0.0:
                raise ValidationError("cosine is undefined for a zero mention vector")
            m = m / norm
        return self.matrix @ m

    def top_k(self, mention_vec, k: int, mention_uid: str = "") -> CandidateSet:
        if k < 1:
            raise ValidationError(f"k must be >= 1, got {k}")
        scores = self.scores(mention_vec)
        n = scores.shape[0]
        take = min(k, n)

        pool_idx: list[np.ndarray] = []
        for start in range(0, n, self.block_size):
            block = scores[start : start + self.block_size]
            local = np.argsort(-block, kind="stable")[:take]
            pool_idx.append(local + start)
        pool = np.concatenate(pool_idx)
        # merge pools: score descending, then KB position ascending
        order = np.lexsort((pool, -scores[pool]))[:take]
        chosen = pool[order]

        candidates = [(self.kb.entities[int(i)].id, float(scores[int(i)])) for i in chosen]
        return CandidateSet(mention_uid=mention_uid, candidates=candidates, k=k, metric=self.metric)


def top_k(store: EmbeddingStore, kb: KnowledgeBase, mention_vec, k: int, metric: str = "dot") -> CandidateSet:
    return CandidateRetriever(store, kb, metric=metric).top_k(mention_vec, k)


def mine_negatives(
    store: EmbeddingStore,
    kb: KnowledgeBase,
    mention: Mention,
    gold_id: str,
    total: int,
    hard_ratio: float,
    seed: int,
    metric: str = "dot",
) -> list[NegativeSample]:
    """Pick ``total`` non-gold entities: the ``ceil(hard_ratio * total)``
    highest-scoring ones as hard negatives, the rest drawn uniformly (seeded)
    from the remaining entities."""
    if gold_id not in kb:
        raise ValidationError(f"gold id {gold_id!r} not in knowledge base")
    if total < 1:
        raise ValidationError(f"total must be >= 1, got {total}")
    if not 0.0 <= hard_ratio <= 1.0:
        raise ValidationError(f"hard_ratio must be in [0, 1], got {hard_ratio}")
    n = len(kb)
    if total >= n - 1:
        raise InsufficientPopulationError(f"cannot draw {total} negatives from {n - 1} non-gold entities")

    hard_count = math.ceil(hard_ratio * total)
    retriever = CandidateRetriever(store, kb, metric=metric)
    scores = retriever.scores(lookup(store, mention.uid))
    ranked = np.lexsort((np.arange(n), -scores))  # score desc, position asc
    gold_pos = kb.position(gold_id)

    hard_ids: list[str] = []
    for idx in ranked:
        if len(hard_ids) == hard_count:
            break
        if int(idx) == gold_pos:
            continue
        hard_ids.append(kb.entities[int(idx)].id)

    excluded = set(hard_ids) | {gold_id}
    rest = [ent.id for ent in kb if ent.id not in excluded]
    rng = random.Random(seed)
    random_ids = rng.sample(rest, total - hard_count)

    out = [NegativeSample(mention.uid, eid, "hard") for eid in hard_ids]
    out += [NegativeSample(mention.uid, eid, "random") for eid in random_ids]
    return out


TRAINING_PAIR_LABELS = ("pos", "hard_neg", "rand_neg")


def export_training_pairs(mentions: list[Mention], negatives: list[NegativeSample], path) -> None:
    """TSV of (uid, surface, context, entity_id, label) rows: one positive per
    mention followed by its mined negatives. Empty mention list gives an
    empty file."""
    by_uid: dict[str, list[NegativeSample]] = {}
    for neg in negatives:
        by_uid.setdefault(neg.mention_uid, []).append(neg)

    def field(value: str) -> str:
        if "\t" in value or "\n" in value:
            raise ValidationError(f"field contains tab/newline: {value!r}")
        return value

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for m in mentions:
            if m.gold_id is None:
                raise ValidationError(f"mention {m.uid} has no gold id; cannot export a positive pair")
            ctx = field(m.context or "")
            f.write("\t".join((field(m.uid), field(m.surface), ctx, field(m.gold_id), "pos")) + "\n")
            for neg in by_uid.get(m.uid, ()):
                label = "hard_neg" if neg.kind == "hard" else "rand_neg"
                f.write("\t".join((field(m.uid), field(m.surface), ctx, field(neg.entity_id), label)) + "\n")


def validate_training_pairs(path) -> dict:
    """Re-read an exported pair file and check the row contract: known labels,
    exactly one positive per mention, no entity repeated within a mention."""
    problems: list[str] = []
    pos_count: dict[str, int] = {}
    seen: dict[str, set[str]] = {}
    rows = 0
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            rows += 1
            if len(cols) != 5:
                problems.append(f"line {line_no}: expected 5 columns, got {len(cols)}")
                continue
            uid, _surface, _ctx, entity_id, label = cols
            if label not in TRAINING_PAIR_LABELS:
                problems.append(f"line {line_no}: unknown label {label!r}")
            if label == "pos":
                pos_count[uid] = pos_count.get(uid, 0) + 1
            if entity_id in seen.setdefault(uid, set()):
                problems.append(f"line {line_no}: entity {entity_id!r} repeated for mention {uid}")
            seen[uid].add(entity_id)
    for uid in seen:
        count = pos_count.get(uid, 0)
        if count != 1:
            problems.append(f"mention {uid}: {count} positive rows")
    return {"ok": not problems, "rows": rows, "mentions": len(seen), "problems": problems}
