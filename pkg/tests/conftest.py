import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
TOY = ROOT / "fixtures" / "toy"
TEMPLATES = ROOT / "fixtures" / "templates"

sys.path.insert(0, str(ROOT / "src"))

from bioelink import corpus, embedstore, promptkit  # noqa: E402


@pytest.fixture(scope="session")
def toy_kb():
    return corpus.load_kb(TOY / "kb.tsv")


@pytest.fixture(scope="session")
def toy_train():
    return corpus.load_mentions(TOY / "train.tsv", split="train")


@pytest.fixture(scope="session")
def toy_test():
    return corpus.load_mentions(TOY / "test.tsv", split="test")


@pytest.fixture(scope="session")
def toy_store():
    """Entity + mention vectors merged into one store."""
    return embedstore.merge(
        embedstore.import_text(TOY / "entity_embeddings.tsv"),
        embedstore.import_text(TOY / "mention_embeddings.tsv"),
    )


@pytest.fixture(scope="session")
def teacher_template():
    return promptkit.load_template(TEMPLATES / "teacher_en.json")


@pytest.fixture(scope="session")
def student_template():
    return promptkit.load_template(TEMPLATES / "student_en.json")
