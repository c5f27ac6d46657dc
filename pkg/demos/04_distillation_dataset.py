"""Walkthrough: generate the instruction-tuning dataset with a mock teacher,
audit every mention, validate the emitted records, and show that a warm cache
makes the rerun free and byte-identical.

Run from the repo root: python3 demos/04_distillation_dataset.py
"""

import json
import tempfile
from pathlib import Path

from bioelink import corpus, embedstore, promptkit, teacher
from bioelink.distillgen import generate_dataset, validate_dataset

ROOT = Path(__file__).resolve().parent.parent / "fixtures"
work = Path(tempfile.mkdtemp())

kb = corpus.load_kb(ROOT / "toy" / "kb.tsv")
mentions = corpus.load_mentions(ROOT / "toy" / "train.tsv", split="train")
store = embedstore.merge(
    embedstore.import_text(ROOT / "toy" / "entity_embeddings.tsv"),
    embedstore.import_text(ROOT / "toy" / "mention_embeddings.tsv"),
)
teacher_tpl = promptkit.load_template(ROOT / "templates" / "teacher_en.json")
student_tpl = promptkit.load_template(ROOT / "templates" / "student_en.json")

cache = teacher.CompletionCache(work / "cache")
backend = teacher.OracleMockBackend.from_mentions(mentions, kb)  # stand-in for a real teacher API

for attempt in (1, 2):
    ledger = teacher.UsageLedger()
    summary = generate_dataset(
        mentions, kb, store, backend, teacher_tpl, student_tpl,
        model="mock-teacher", k=6, limit=len(mentions),
        cache=cache, ledger=ledger,
        dataset_path=work / "dataset.jsonl", audit_path=work / "audit.jsonl",
    )
    print(f"run {attempt}: emitted {summary.emitted}/{summary.processed}, "
          f"backend calls {ledger.backend_calls}, cache hits {ledger.cache_hits}")

print("\nfirst record:")
record = json.loads((work / "dataset.jsonl").read_text().splitlines()[0])
print(json.dumps(record, indent=2, ensure_ascii=False)[:600], "...")

report = validate_dataset(work / "dataset.jsonl")
print(f"\nvalidate_dataset: ok={report.ok}, records={report.records}, warnings={report.warnings}")

audit = [json.loads(l) for l in (work / "audit.jsonl").read_text().splitlines()]
print("audit outcomes:", {row["uid"]: row["outcome"] for row in audit})
