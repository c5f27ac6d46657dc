"""Shared fixtures: a synthetic linking corpus, a teacher dataset generated
through the primary pipeline's CLI (mock oracle teacher), and a tiny locally
built base model that has been warmed up on the echo task so adapter training
only has to learn the teacher's reorderings.

Everything consumes the primary package strictly through its external
interfaces: the bioelink CLI, the TSV/JSONL file formats, and the
chat-completion wire format.
"""

import json
import random
import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from studentlab import records, tinymodel  # noqa: E402

GREEK = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota",
         "kappa", "lambda", "mu", "nu", "xi", "omicron", "pi", "rho", "sigma", "tau",
         "upsilon", "phi", "chi", "psi", "omega", "prime", "second", "third", "fourth",
         "fifth", "sixth"]

STUDENT_TEMPLATE = {
    "kind": "student",
    "instruction_text": "Rank the candidates for the mention, best first, as a numbered list.\n\nMention: {mention}\nCandidates:\n{candidates}\nRanking:",
}
TEACHER_TEMPLATE = {
    "kind": "teacher",
    "instruction_text": STUDENT_TEMPLATE["instruction_text"],
    "output_format_text": "Reply with the numbered list only.",
}


def bioelink(*argv):
    """Invoke the primary pipeline's CLI."""
    proc = subprocess.run([sys.executable, "-m", "bioelink.cli", *map(str, argv)],
                          capture_output=True, text=True)
    return proc


def synth_corpus(root: Path, n_entities=30, n_mentions=50, seed=2):
    """KB + labeled mentions + one-hot-style embeddings. Each mention's vector
    scores exactly six chosen entities (6..1), so retrieval at k=6 returns a
    known candidate list and the gold is always retrieved."""
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    entities = [(f"E{i:03d}", f"condition {GREEK[i % len(GREEK)]} {i // len(GREEK)}".strip())
                for i in range(n_entities)]
    entities = [(eid, name.removesuffix(" 0")) for eid, name in entities]
    with open(root / "kb.tsv", "w", encoding="utf-8") as f:
        for eid, name in entities:
            f.write(f"{eid}\t{name}\n")
    with open(root / "entity_embeddings.tsv", "w", encoding="utf-8") as f:
        for row, (eid, _) in enumerate(entities):
            vec = ["1" if col == row else "0" for col in range(n_entities)]
            f.write(f"{eid}\t{' '.join(vec)}\n")

    mentions = []
    with open(root / "train.tsv", "w", encoding="utf-8") as mf, \
         open(root / "mention_embeddings.tsv", "w", encoding="utf-8") as ef:
        for i in range(n_mentions):
            picks = rng.sample(range(n_entities), 6)
            gold_pos = rng.choice(picks)
            surface = f"case {seed}{i:03d}"
            mf.write(f"{entities[gold_pos][0]}\t{surface}\n")
            vec = ["0"] * n_entities
            for score, pos in zip(range(6, 0, -1), picks):
                vec[pos] = str(score)
            ef.write(f"train:{i + 1}\t{' '.join(vec)}\n")
            mentions.append((f"train:{i + 1}", surface, entities[gold_pos][0], picks))
    return entities, mentions


@pytest.fixture(scope="session")
def lab(tmp_path_factory):
    """corpus -> imported stores -> teacher dataset (oracle mock) -> echo base."""
    root = tmp_path_factory.mktemp("lab")
    corpus_dir = root / "corpus"
    synth_corpus(corpus_dir)

    templates = root / "templates"
    templates.mkdir()
    (templates / "student.json").write_text(json.dumps(STUDENT_TEMPLATE), encoding="utf-8")
    (templates / "teacher.json").write_text(json.dumps(TEACHER_TEMPLATE), encoding="utf-8")

    emb = root / "emb"
    for name, src in (("entities", "entity_embeddings.tsv"), ("mentions", "mention_embeddings.tsv")):
        proc = bioelink("import-embeddings", "--input", corpus_dir / src, "--out-dir", emb, "--name", name)
        assert proc.returncode == 0, proc.stderr

    out = root / "out"
    proc = bioelink(
        "generate", "--kb", corpus_dir / "kb.tsv", "--mentions", corpus_dir / "train.tsv",
        "--split", "train", "--limit", 50,
        "--entity-embeddings", emb / "entities.manifest.json",
        "--mention-embeddings", emb / "mentions.manifest.json",
        "--teacher-template", templates / "teacher.json",
        "--student-template", templates / "student.json",
        "--backend", "mock:oracle", "--model", "toy-teacher", "--out-dir", out,
    )
    assert proc.returncode == 0, proc.stderr
    dataset_path = out / "dataset.jsonl"
    dataset = records.load_dataset(dataset_path)
    assert len(dataset) == 50

    # tiny base model, warmed up on the echo task (candidates in input order);
    # extra synthetic prompts make the echo behavior less prompt-specific
    echo_pairs = [(r.instruction, "\n".join(records.candidate_block(r.instruction))) for r in dataset]
    rng = random.Random(9)
    entity_names = [line.split("\t")[1] for line in (corpus_dir / "kb.tsv").read_text().splitlines()]
    for i in range(50):
        cands = rng.sample(entity_names, 6)
        instr = STUDENT_TEMPLATE["instruction_text"] \
            .replace("{mention}", f"case 9{i:03d}") \
            .replace("{candidates}", "\n".join(f"{j}. {c}" for j, c in enumerate(cands, 1)))
        echo_pairs.append((instr, "\n".join(cands)))
    tokenizer = tinymodel.build_tokenizer([i + "\n" + o for i, o in echo_pairs] +
                                          [r.output for r in dataset], vocab_size=500)
    base = tinymodel.build_causal_lm(tokenizer, seed=0)
    tinymodel.lm_fit(base, tokenizer, echo_pairs, epochs=300, lr=3e-3, seed=1, stop_below=0.04)
    base_dir = root / "base"
    tinymodel.save_base(base, tokenizer, base_dir)

    return {
        "root": root,
        "corpus": corpus_dir,
        "templates": templates,
        "emb": emb,
        "dataset_path": dataset_path,
        "dataset": dataset,
        "base_dir": base_dir,
    }
