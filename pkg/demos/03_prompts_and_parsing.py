"""Walkthrough: render a teacher prompt (task statement, output format,
worked examples, query) and a student instruction (query only), then parse a
messy model reply back into a full candidate permutation.

Run from the repo root: python3 demos/03_prompts_and_parsing.py
"""

from pathlib import Path

from bioelink import corpus, embedstore, promptkit, rankparse
from bioelink.retriever import CandidateRetriever

ROOT = Path(__file__).resolve().parent.parent / "fixtures"

kb = corpus.load_kb(ROOT / "toy" / "kb.tsv")
mentions = corpus.load_mentions(ROOT / "toy" / "test.tsv", split="test")
store = embedstore.merge(
    embedstore.import_text(ROOT / "toy" / "entity_embeddings.tsv"),
    embedstore.import_text(ROOT / "toy" / "mention_embeddings.tsv"),
)

mention = mentions[2]  # "lazy eye"
cs = CandidateRetriever(store, kb).top_k(embedstore.lookup(store, mention.uid), 6, mention_uid=mention.uid)

teacher_tpl = promptkit.load_template(ROOT / "templates" / "teacher_en.json")
student_tpl = promptkit.load_template(ROOT / "templates" / "student_en.json")

teacher_prompt = promptkit.render_teacher(teacher_tpl, mention, cs, kb)
student_prompt = promptkit.render_student(student_tpl, mention, cs, kb)
print(f"teacher prompt: {len(teacher_prompt.text)} chars "
      f"({len(teacher_tpl.examples)} worked examples); student prompt: {len(student_prompt.text)} chars")
print("\n--- student instruction ---")
print(student_prompt.text)

# a sloppy reply: markers vary, case drifts, one candidate repeated, one
# hallucinated, one missing — the parser still returns a total order
sloppy = """Here is my ranking:
1) amblyopia
2. STRABISMUS
- amblyopia
3: pink unicorn syndrome
4. astigmatism
5. myopia"""
parsed = rankparse.parse_ranked(sloppy, teacher_prompt.candidate_labels, cs.entity_ids, mention_uid=mention.uid)
print("--- parsing a sloppy reply ---")
print(f"order:   {[kb.get(eid).name for eid in parsed.order]}")
print(f"repairs: {parsed.repairs} (clean={parsed.clean})")
print(f"top-1:   {kb.get(rankparse.top1(parsed)).name!r} (gold is {kb.get(mention.gold_id).name!r})")
