"""Corpus-scale generation of the instruction-tuning dataset: retrieve
candidates, ask the teacher to re-rank, parse, and emit one record per
mention plus an audit line for every mention processed.

Records are written in mention order regardless of worker completion order,
so a rerun against a warm cache reproduces the dataset byte for byte.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import KnowledgeBase, Mention, window_context
from .embedstore import EmbeddingStore, lookup
from .errors import BackendError, ConfigError, FormatError, UnparseableRankingError
from .promptkit import PromptTemplate, extract_numbered_block, render_student, render_teacher
from .rankparse import RankedList, parse_ranked
from .retriever import CandidateRetriever
from .teacher import CompletionRequest, cached_complete

FILTER_POLICIES = ("keep-all", "strict-clean", "drop-unparseable-only")

OUTCOME_EMITTED = "emitted"
OUTCOME_UNPARSEABLE = "filtered:unparseable"
OUTCOME_NOT_CLEAN = "filtered:not_clean"
OUTCOME_BACKEND = "failed:backend"


@dataclass
class GenerationSummary:
    processed: int = 0
    emitted: int = 0
    outcomes: dict = field(default_factory=dict)
    backend_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "processed": self.processed,
            "emitted": self.emitted,
            "outcomes": self.outcomes,
            "backend_failures": self.backend_failures,
        }


def generate_dataset(
    mentions: list[Mention],
    kb: KnowledgeBase,
    store: EmbeddingStore,
    backend,
    teacher_template: PromptTemplate,
    student_template: PromptTemplate,
    *,
    model: str,
    k: int = 6,
    limit: int,
    filter_policy: str = "drop-unparseable-only",
    temperature: float = 0.0,
    max_output: int = 512,
    max_context_chars: int = 256,
    metric: str = "dot",
    cache=None,
    ledger=None,
    rate_limiter=None,
    parallelism: int = 1,
    dataset_path,
    audit_path,
) -> GenerationSummary:
    if filter_policy not in FILTER_POLICIES:
        raise ConfigError(f"filter policy must be one of {FILTER_POLICIES}, got {filter_policy!r}")
    if limit < 1:
        raise ConfigError(f"limit must be >= 1, got {limit}")
    if limit > len(mentions):
        raise ConfigError(f"limit {limit} exceeds the {len(mentions)} available mentions")

    retriever = CandidateRetriever(store, kb, metric=metric)
    batch = mentions[:limit]

    def process(mention: Mention):
        ctx = None
        if mention.context is not None:
            ctx = window_context(mention.context, mention.surface, max_context_chars)
        windowed = Mention(uid=mention.uid, surface=mention.surface, context=ctx,
                           gold_id=mention.gold_id, split=mention.split)
        cs = retriever.top_k(lookup(store, mention.uid), k, mention_uid=mention.uid)
        gold_in = mention.gold_id is not None and mention.gold_id in cs.entity_ids

        prompt = render_teacher(teacher_template, windowed, cs, kb)
        request = CompletionRequest(model=model, prompt_text=prompt.text, temperature=temperature,
                                    max_output=max_output, tags={"mention_uid": mention.uid})
        try:
            response = cached_complete(cache, backend, request, ledger=ledger, rate_limiter=rate_limiter)
        except BackendError as exc:
            return None, {"uid": mention.uid, "outcome": OUTCOME_BACKEND, "repairs": [],
                          "gold_in_candidates": gold_in, "error": str(exc)}

        try:
            ranked = parse_ranked(response.text, prompt.candidate_labels, cs.entity_ids, mention_uid=mention.uid)
        except UnparseableRankingError:
            if filter_policy != "keep-all":
                return None, {"uid": mention.uid, "outcome": OUTCOME_UNPARSEABLE, "repairs": [],
                              "gold_in_candidates": gold_in}
            # keep-all: fall back to retrieval order so every mention yields a record
            ranked = RankedList(mention_uid=mention.uid, order=list(cs.entity_ids),
                                repairs=["unparseable"], clean=False)

        if filter_policy == "strict-clean" and not ranked.clean:
            return None, {"uid": mention.uid, "outcome": OUTCOME_NOT_CLEAN, "repairs": ranked.repairs,
                          "gold_in_candidates": gold_in}

        instruction = render_student(student_template, windowed, cs, kb)
        label_by_id = dict(zip(cs.entity_ids, prompt.candidate_labels))
        record = {
            "instruction": instruction.text,
            "output": "\n".join(label_by_id[eid] for eid in ranked.order),
            "meta": {
                "mention_uid": mention.uid,
                "candidate_ids": cs.entity_ids,
                "ranked_ids": ranked.order,
                "clean": ranked.clean,
                "gold_in_candidates": gold_in,
                "teacher_model": model,
            },
        }
        audit = {"uid": mention.uid, "outcome": OUTCOME_EMITTED, "repairs": ranked.repairs,
                 "gold_in_candidates": gold_in}
        return record, audit

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(process, batch))
    else:
        results = [process(m) for m in batch]

    summary = GenerationSummary()
    with open(dataset_path, "w", encoding="utf-8", newline="\n") as data_f, \
         open(audit_path, "w", encoding="utf-8", newline="\n") as audit_f:
        for record, audit in results:
            summary.processed += 1
            summary.outcomes[audit["outcome"]] = summary.outcomes.get(audit["outcome"], 0) + 1
            if audit["outcome"] == OUTCOME_BACKEND:
                summary.backend_failures += 1
            if record is not None:
                summary.emitted += 1
                data_f.write(json.dumps(record, ensure_ascii=False) + "\n")
            audit_f.write(json.dumps(audit, ensure_ascii=False) + "\n")
    if summary.processed and summary.backend_failures == summary.processed:
        raise BackendError(f"backend failed for all {summary.processed} mentions; see {audit_path}")
    return summary


@dataclass
class DatasetReport:
    records: int = 0
    problems: list = field(default_factory=list)   # (line_no, message)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "records": self.records,
            "problems": [{"line": n, "message": m} for n, m in self.problems],
            "warnings": list(self.warnings),
        }


_META_KEYS = ("mention_uid", "candidate_ids", "ranked_ids", "clean", "gold_in_candidates", "teacher_model")


def validate_dataset(path) -> DatasetReport:
    """Re-parse every record and re-check the generator's postconditions:
    schema, the output-lines-are-a-permutation invariant, meta agreement, and
    duplicate mention uids (a resume bug, warned not failed)."""
    report = DatasetReport()
    seen_uids: dict[str, int] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc

    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        report.records += 1
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            report.problems.append((line_no, f"bad JSON: {exc}"))
            continue

        missing = [key for key in ("instruction", "output", "meta") if key not in record]
        if missing:
            report.problems.append((line_no, f"missing keys: {', '.join(missing)}"))
            continue
        meta = record["meta"]
        if not isinstance(meta, dict) or any(key not in meta for key in _META_KEYS):
            report.problems.append((line_no, "meta is missing required keys"))
            continue

        labels = extract_numbered_block(record["instruction"])
        output_lines = record["output"].split("\n")
        if not labels:
            report.problems.append((line_no, "instruction has no numbered candidate block"))
            continue
        if sorted(output_lines) != sorted(labels):
            report.problems.append(
                (line_no, f"output lines are not a permutation of the {len(labels)} candidates "
                          f"named in the instruction (got {len(output_lines)} lines)"))
            continue

        candidate_ids = list(meta["candidate_ids"])
        ranked_ids = list(meta["ranked_ids"])
        if len(candidate_ids) != len(labels):
            report.problems.append((line_no, f"meta lists {len(candidate_ids)} candidate ids, instruction names {len(labels)}"))
            continue
        if sorted(ranked_ids) != sorted(candidate_ids):
            report.problems.append((line_no, "meta.ranked_ids is not a permutation of meta.candidate_ids"))
            continue
        label_by_id = dict(zip(candidate_ids, labels))
        if [label_by_id[rid] for rid in ranked_ids] != output_lines:
            report.problems.append((line_no, "output order disagrees with meta.ranked_ids"))
            continue

        uid = meta["mention_uid"]
        if uid in seen_uids:
            report.warnings.append(f"line {line_no}: mention {uid} already seen at line {seen_uids[uid]}")
        else:
            seen_uids[uid] = line_no

    return report
