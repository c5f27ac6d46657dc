"""Walkthrough: mine hard + random negatives for each labeled training
mention and export the contrastive training pairs used to fine-tune an
external retriever encoder.

Run from the repo root: python3 demos/02_negatives_and_training_pairs.py
"""

import tempfile
from pathlib import Path

from bioelink import corpus, embedstore, retriever

TOY = Path(__file__).resolve().parent.parent / "fixtures" / "toy"

kb = corpus.load_kb(TOY / "kb.tsv")
mentions = corpus.load_mentions(TOY / "train.tsv", split="train")
store = embedstore.merge(
    embedstore.import_text(TOY / "entity_embeddings.tsv"),
    embedstore.import_text(TOY / "mention_embeddings.tsv"),
)

# production defaults are 15 negatives with 10% hard; the toy KB only has 12
# entities, so sample 5 with 20% hard (=> ceil(0.2*5) = 1 hard negative)
negatives = []
for m in mentions:
    negs = retriever.mine_negatives(store, kb, m, m.gold_id, total=5, hard_ratio=0.2, seed=7)
    negatives.extend(negs)
    hard = [n.entity_id for n in negs if n.kind == "hard"]
    rand = [n.entity_id for n in negs if n.kind == "random"]
    print(f"{m.surface!r}: gold {m.gold_id}, hard {hard}, random {rand}")

out = Path(tempfile.mkdtemp()) / "training_pairs.tsv"
retriever.export_training_pairs(mentions, negatives, out)
print(f"\nwrote {out}:")
for line in out.read_text().splitlines()[:8]:
    print("  " + line)
print("  ...")
print("validation:", retriever.validate_training_pairs(out))
