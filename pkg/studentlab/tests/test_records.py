import json

import pytest

from studentlab import records


def write_dataset(path, rows):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")
    return path


GOOD = {
    "instruction": "Rank these.\n\nMention: x\nCandidates:\n1. alpha\n2. beta\nRanking:",
    "output": "beta\nalpha",
    "meta": {"mention_uid": "train:1"},
}


class TestLoadDataset:
    def test_good_record(self, tmp_path):
        (rec,) = records.load_dataset(write_dataset(tmp_path / "d.jsonl", [GOOD]))
        assert rec.output == "beta\nalpha"
        assert records.candidate_block(rec.instruction) == ["alpha", "beta"]

    def test_non_permutation_rejected(self, tmp_path):
        bad = dict(GOOD, output="beta\nbeta")
        with pytest.raises(ValueError, match="permutation"):
            records.load_dataset(write_dataset(tmp_path / "d.jsonl", [bad]))

    def test_missing_keys_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="missing keys"):
            records.load_dataset(write_dataset(tmp_path / "d.jsonl", [{"instruction": "x"}]))

    def test_empty_dataset_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            records.load_dataset(path)

    def test_line_number_in_error(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(GOOD) + "\n{broken\n")
        with pytest.raises(ValueError, match=":2:"):
            records.load_dataset(path)


class TestTsvReaders:
    def test_kb_names(self, tmp_path):
        path = tmp_path / "kb.tsv"
        path.write_text("E1\talpha\nE2\tbeta\n", encoding="utf-8")
        assert records.load_kb_names(path) == {"E1": "alpha", "E2": "beta"}

    def test_mention_texts_uid_contract(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("E1\tfoo\nE2\tbar\tsome context\n", encoding="utf-8")
        rows = records.load_mention_texts(path, "train")
        assert rows == [("train:1", "foo", None), ("train:2", "bar", "some context")]
