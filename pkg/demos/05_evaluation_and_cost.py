"""Walkthrough: run end-to-end linking evaluation with three mock rerankers
and render a per-model cost report. The oracle mock hits the retrieval
ceiling (acc@1 == recall@k); the reverse mock shows the floor; every run
respects acc@1 <= acc@5 <= recall@k.

Run from the repo root: python3 demos/05_evaluation_and_cost.py
"""

import tempfile
from pathlib import Path

from bioelink import corpus, embedstore, promptkit, teacher
from bioelink.evalharness import run_eval

ROOT = Path(__file__).resolve().parent.parent / "fixtures"
work = Path(tempfile.mkdtemp())

kb = corpus.load_kb(ROOT / "toy" / "kb.tsv")
mentions = corpus.load_mentions(ROOT / "toy" / "test.tsv", split="test")
store = embedstore.merge(
    embedstore.import_text(ROOT / "toy" / "entity_embeddings.tsv"),
    embedstore.import_text(ROOT / "toy" / "mention_embeddings.tsv"),
)
template = promptkit.load_template(ROOT / "templates" / "student_en.json")

ledger = teacher.UsageLedger()
backends = {
    "identity": teacher.IdentityMockBackend(),
    "oracle": teacher.OracleMockBackend.from_mentions(mentions, kb),
    "reverse": teacher.ReverseMockBackend(),
}
for name, backend in backends.items():
    report = run_eval(mentions, kb, store, backend, template, model=f"mock-{name}",
                      k=6, acc_ks=(1, 5), ledger=ledger, trace_path=work / f"{name}.jsonl")
    print(f"{name:<9} acc@1={report.acc_at[1]:.3f} acc@5={report.acc_at[5]:.3f} "
          f"recall@6={report.recall_at_k_candidates:.3f}")

print("\ncost report (mock models priced like the toy price table):")
prices = teacher.load_price_table(ROOT / "toy" / "prices.json")
prices.update({f"mock-{n}": {"prompt_per_1k": 0.5, "completion_per_1k": 1.5} for n in backends})
print(teacher.render_cost_report(teacher.cost_report(ledger, prices)))
