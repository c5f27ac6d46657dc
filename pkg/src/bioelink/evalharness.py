"""End-to-end linking evaluation: retrieve, re-rank through any backend,
parse, and score Acc@k against gold, with retrieval recall as the ceiling.

Metric arithmetic is integer counting with a single division at the end, so
results are exact and order-independent under parallel execution.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .corpus import KnowledgeBase, Mention, window_context
from .embedstore import EmbeddingStore, lookup
from .errors import BackendError, UnparseableRankingError, ValidationError
from .promptkit import PromptTemplate, render_student, render_teacher
from .rankparse import parse_ranked
from .retriever import CandidateRetriever, CandidateSet
from .teacher import CompletionRequest, cached_complete


def acc_at_k(ranked_lists: list[list[str]], golds: list[str], k: int) -> float:
    """Fraction of lists whose gold id appears among the first min(k, len)
    positions. Lists shorter than k (or empty, e.g. a failed mention) simply
    cannot hit beyond their length."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(ranked_lists) != len(golds):
        raise ValidationError(f"{len(ranked_lists)} rankings vs {len(golds)} golds")
    if not ranked_lists:
        raise ValidationError("Acc@k is undefined over zero mentions")
    hits = sum(1 for order, gold in zip(ranked_lists, golds) if gold in order[:k])
    return hits / len(ranked_lists)


def recall_at_k(candidate_sets: list[CandidateSet], golds: list[str]) -> float:
    """Fraction of mentions whose gold survived retrieval — the ceiling for
    any reranker's Acc."""
    if len(candidate_sets) != len(golds):
        raise ValidationError(f"{len(candidate_sets)} candidate sets vs {len(golds)} golds")
    if not candidate_sets:
        raise ValidationError("recall@k is undefined over zero mentions")
    hits = sum(1 for cs, gold in zip(candidate_sets, golds) if gold in cs.entity_ids)
    return hits / len(candidate_sets)


@dataclass
class EvalReport:
    acc_at: dict[int, float]
    recall_at_k_candidates: float
    n_evaluated: int
    n_skipped: int
    trace_path: str
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "acc": {str(k): v for k, v in sorted(self.acc_at.items())},
            "recall_at_k_candidates": self.recall_at_k_candidates,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "trace": self.trace_path,
            "config": self.config,
        }

    def render_text(self) -> str:
        lines = [f"evaluated {self.n_evaluated} mentions ({self.n_skipped} skipped)"]
        for k in sorted(self.acc_at):
            lines.append(f"  Acc@{k}: {self.acc_at[k]:.4f}")
        lines.append(f"  retrieval recall@{self.config.get('k', '?')} candidates: {self.recall_at_k_candidates:.4f}")
        return "\n".join(lines) + "\n"


def _build_report(per_mention, acc_ks, trace_path, config) -> EvalReport:
    evaluated = [row for row in per_mention if row["evaluated"]]
    n_skipped = len(per_mention) - len(evaluated)
    if not evaluated:
        raise ValidationError("no mentions with usable gold ids; metrics are undefined")

    recall_hits = sum(1 for row in evaluated if row["gold_in_candidates"])
    acc_hits = {k: 0 for k in acc_ks}
    for row in evaluated:
        order = row["ranked"] or []
        for k in acc_ks:
            if row["gold_id"] in order[:k]:
                acc_hits[k] += 1

    # sandwich invariant in integer arithmetic: acc@k1 <= acc@k2 <= recall
    ordered = sorted(acc_ks)
    for lo, hi in zip(ordered, ordered[1:]):
        assert acc_hits[lo] <= acc_hits[hi], (lo, hi, acc_hits)
    assert acc_hits[ordered[-1]] <= recall_hits, (acc_hits, recall_hits)

    n = len(evaluated)
    return EvalReport(
        acc_at={k: acc_hits[k] / n for k in acc_ks},
        recall_at_k_candidates=recall_hits / n,
        n_evaluated=n,
        n_skipped=n_skipped,
        trace_path=str(trace_path),
        config=config,
    )


def run_eval(
    mentions: list[Mention],
    kb: KnowledgeBase,
    store: EmbeddingStore,
    backend,
    template: PromptTemplate,
    *,
    model: str,
    k: int = 6,
    acc_ks: tuple[int, ...] = (1, 5),
    temperature: float = 0.0,
    max_output: int = 512,
    max_context_chars: int = 256,
    metric: str = "dot",
    strict_gold: bool = False,
    cache=None,
    ledger=None,
    rate_limiter=None,
    parallelism: int = 1,
    trace_path,
    config_extra: dict | None = None,
) -> EvalReport:
    retriever = CandidateRetriever(store, kb, metric=metric)
    render = render_teacher if template.kind == "teacher" else render_student

    def process(mention: Mention) -> dict:
        ctx = None
        if mention.context is not None:
            ctx = window_context(mention.context, mention.surface, max_context_chars)
        windowed = Mention(uid=mention.uid, surface=mention.surface, context=ctx,
                           gold_id=mention.gold_id, split=mention.split)
        cs = retriever.top_k(lookup(store, mention.uid), k, mention_uid=mention.uid)
        gold_resolves = mention.gold_id is not None and mention.gold_id in kb
        # unresolvable golds count as always-wrong unless --strict-gold excludes them
        evaluated = mention.gold_id is not None and (gold_resolves or not strict_gold)

        row = {
            "uid": mention.uid,
            "surface": mention.surface,
            "gold_id": mention.gold_id,
            "evaluated": evaluated,
            "gold_in_candidates": mention.gold_id in cs.entity_ids if mention.gold_id else False,
            "candidates": [[eid, s] for eid, s in cs.candidates],
            "ranked": None,
            "repairs": [],
            "raw_output": None,
            "outcome": "ok",
        }
        prompt = render(template, windowed, cs, kb)
        request = CompletionRequest(model=model, prompt_text=prompt.text, temperature=temperature,
                                    max_output=max_output, tags={"mention_uid": mention.uid})
        try:
            response = cached_complete(cache, backend, request, ledger=ledger, rate_limiter=rate_limiter)
        except BackendError as exc:
            row["outcome"] = f"backend_error: {exc}"
            return row
        row["raw_output"] = response.text
        try:
            ranked = parse_ranked(response.text, prompt.candidate_labels, cs.entity_ids, mention_uid=mention.uid)
        except UnparseableRankingError:
            row["outcome"] = "unparseable"
            return row
        row["ranked"] = ranked.order
        row["repairs"] = ranked.repairs
        return row

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            per_mention = list(pool.map(process, mentions))
    else:
        per_mention = [process(m) for m in mentions]

    with open(trace_path, "w", encoding="utf-8", newline="\n") as f:
        for row in per_mention:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")

    if per_mention and all(row["outcome"].startswith("backend_error") for row in per_mention):
        raise BackendError(f"backend failed for all {len(per_mention)} mentions; see {trace_path}")

    config = {
        "k": k,
        "metric": metric,
        "acc_ks": list(acc_ks),
        "backend": getattr(backend, "name", backend.__class__.__name__),
        "model": model,
        "temperature": temperature,
        "strict_gold": strict_gold,
        "n_mentions": len(mentions),
    }
    if config_extra:
        config.update(config_extra)
    return _build_report(per_mention, tuple(acc_ks), trace_path, config)
