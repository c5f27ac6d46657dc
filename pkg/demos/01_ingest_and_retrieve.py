"""Walkthrough: load the toy knowledge base and mentions, import embeddings,
and retrieve top-k candidates with the exact inner-product scan.

Run from the repo root: python3 demos/01_ingest_and_retrieve.py
"""

from pathlib import Path

from bioelink import corpus, embedstore
from bioelink.retriever import CandidateRetriever

TOY = Path(__file__).resolve().parent.parent / "fixtures" / "toy"

kb = corpus.load_kb(TOY / "kb.tsv")
print(f"knowledge base: {len(kb)} entities, e.g. {kb.entities[0].id} = {kb.entities[0].name!r}")

mentions = corpus.load_mentions(TOY / "test.tsv", split="test")
print(f"test mentions: {[m.surface for m in mentions]}")

report = corpus.build_ingest_report(kb, mentions, kb_path="kb.tsv", mention_path="test.tsv", split="test")
print(f"ingest: accepted {report.accepted}/{report.total}, unresolved gold ids: {len(report.unresolved)}")

# long contexts are clipped to a character budget centered on the mention
ctx = "history: " + "x" * 300 + " the lens has gone cloudy " + "y" * 300
window = corpus.window_context(ctx, "cloudy", 64)
print(f"windowed context ({len(window)} chars): {window!r}")

store = embedstore.merge(
    embedstore.import_text(TOY / "entity_embeddings.tsv"),
    embedstore.import_text(TOY / "mention_embeddings.tsv"),
)
print(f"\nembedding store: {len(store)} vectors, dim {store.dim}")
print("alignment:", embedstore.validate_alignment(store, kb).to_dict())

retriever = CandidateRetriever(store, kb, metric="dot")
for mention in mentions:
    cs = retriever.top_k(embedstore.lookup(store, mention.uid), k=6, mention_uid=mention.uid)
    names = [kb.get(eid).name for eid in cs.entity_ids]
    hit = "HIT " if mention.gold_id in cs.entity_ids else "miss"
    print(f"[{hit}] {mention.surface!r} (gold {kb.get(mention.gold_id).name!r}) -> {names}")
