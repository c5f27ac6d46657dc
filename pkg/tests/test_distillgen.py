import json

import pytest

from bioelink import distillgen, promptkit, teacher
from bioelink.distillgen import generate_dataset, validate_dataset
from bioelink.errors import ConfigError
from bioelink.evalharness import recall_at_k
from bioelink.retriever import CandidateRetriever
from bioelink.embedstore import lookup


def generate(tmp_path, mentions, kb, store, teacher_tpl, student_tpl, backend=None, **kw):
    defaults = dict(model="mock-teacher", k=6, limit=len(mentions), dataset_path=tmp_path / "dataset.jsonl",
                    audit_path=tmp_path / "audit.jsonl")
    defaults.update(kw)
    backend = backend or teacher.IdentityMockBackend()
    summary = generate_dataset(mentions, kb, store, backend, teacher_tpl, student_tpl, **defaults)
    return summary, defaults["dataset_path"], defaults["audit_path"]


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


class TestGenerate:
    def test_identity_teacher_keeps_retrieval_order(self, tmp_path, toy_kb, toy_train, toy_store,
                                                    teacher_template, student_template):
        summary, dataset, audit = generate(tmp_path, toy_train, toy_kb, toy_store,
                                           teacher_template, student_template)
        records = read_jsonl(dataset)
        assert summary.emitted == len(records) == 4
        for rec in records:
            assert rec["meta"]["ranked_ids"] == rec["meta"]["candidate_ids"]
            assert rec["meta"]["clean"] is True
            assert rec["meta"]["teacher_model"] == "mock-teacher"

    def test_oracle_teacher_puts_gold_first_when_retrieved(self, tmp_path, toy_kb, toy_train, toy_store,
                                                           teacher_template, student_template):
        backend = teacher.OracleMockBackend.from_mentions(toy_train, toy_kb)
        _, dataset, _ = generate(tmp_path, toy_train, toy_kb, toy_store,
                                 teacher_template, student_template, backend=backend)
        gold = {m.uid: m.gold_id for m in toy_train}
        for rec in read_jsonl(dataset):
            meta = rec["meta"]
            if meta["gold_in_candidates"]:
                assert meta["ranked_ids"][0] == gold[meta["mention_uid"]]
                assert rec["output"].splitlines()[0] == toy_kb.get(gold[meta["mention_uid"]]).name

    def test_gold_in_candidates_fraction_equals_recall(self, tmp_path, toy_kb, toy_train, toy_store,
                                                       teacher_template, student_template):
        _, dataset, _ = generate(tmp_path, toy_train, toy_kb, toy_store,
                                 teacher_template, student_template)
        records = read_jsonl(dataset)
        fraction = sum(r["meta"]["gold_in_candidates"] for r in records) / len(records)
        retr = CandidateRetriever(toy_store, toy_kb)
        sets = [retr.top_k(lookup(toy_store, m.uid), 6, mention_uid=m.uid) for m in toy_train]
        assert fraction == recall_at_k(sets, [m.gold_id for m in toy_train]) == 0.75

    def test_limit_truncates_in_file_order(self, tmp_path, toy_kb, toy_train, toy_store,
                                           teacher_template, student_template):
        _, dataset, _ = generate(tmp_path, toy_train, toy_kb, toy_store,
                                 teacher_template, student_template, limit=2)
        records = read_jsonl(dataset)
        assert [r["meta"]["mention_uid"] for r in records] == ["train:1", "train:2"]

    def test_limit_above_population_rejected(self, tmp_path, toy_kb, toy_train, toy_store,
                                             teacher_template, student_template):
        with pytest.raises(ConfigError, match="limit"):
            generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template, student_template, limit=5)

    def test_warm_cache_rerun_is_byte_identical_with_zero_backend_calls(
            self, tmp_path, toy_kb, toy_train, toy_store, teacher_template, student_template):
        cache = teacher.CompletionCache(tmp_path / "cache")
        first_ledger = teacher.UsageLedger()
        _, dataset, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                     student_template, cache=cache, ledger=first_ledger)
        first = dataset.read_bytes(), audit.read_bytes()
        assert first_ledger.backend_calls == 4

        second_ledger = teacher.UsageLedger()
        _, dataset, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                     student_template, cache=cache, ledger=second_ledger)
        assert (dataset.read_bytes(), audit.read_bytes()) == first
        assert second_ledger.backend_calls == 0
        assert second_ledger.cache_hits == 4

    def test_parallel_output_matches_serial(self, tmp_path, toy_kb, toy_train, toy_store,
                                            teacher_template, student_template):
        _, serial, _ = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                student_template, dataset_path=tmp_path / "serial.jsonl")
        _, parallel, _ = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                  student_template, dataset_path=tmp_path / "parallel.jsonl", parallelism=4)
        assert serial.read_bytes() == parallel.read_bytes()

    def test_audit_covers_every_mention(self, tmp_path, toy_kb, toy_train, toy_store,
                                        teacher_template, student_template):
        _, _, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template, student_template)
        rows = read_jsonl(audit)
        assert [r["uid"] for r in rows] == [m.uid for m in toy_train]
        assert all(r["outcome"] == "emitted" for r in rows)


def scripted_for(mentions, kb, store, teacher_tpl, reply_by_uid):
    """Scripted backend keyed on the real rendered prompts."""
    retr = CandidateRetriever(store, kb)
    script = {}
    for m in mentions:
        cs = retr.top_k(lookup(store, m.uid), 6, mention_uid=m.uid)
        prompt = promptkit.render_teacher(teacher_tpl, m, cs, kb)
        if m.uid in reply_by_uid:
            script[prompt.text] = reply_by_uid[m.uid](prompt)
    return teacher.ScriptedBackend(script)


class TestFilterPolicies:
    @pytest.fixture()
    def partial_reply_backend(self, toy_kb, toy_train, toy_store, teacher_template):
        def full(prompt):
            return "\n".join(f"{i}. {lab}" for i, lab in enumerate(prompt.candidate_labels, 1))

        def partial(prompt):  # drops all but the second candidate -> repaired parse
            return f"1. {prompt.candidate_labels[1]}"

        def garbage(prompt):
            return "I cannot help with that."

        replies = {"train:1": full, "train:2": partial, "train:3": garbage, "train:4": full}
        return scripted_for(toy_train, toy_kb, toy_store, teacher_template, replies)

    def test_default_drops_unparseable_only(self, tmp_path, toy_kb, toy_train, toy_store,
                                            teacher_template, student_template, partial_reply_backend):
        summary, dataset, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                           student_template, backend=partial_reply_backend,
                                           filter_policy="drop-unparseable-only")
        assert summary.emitted == 3
        outcomes = {r["uid"]: r["outcome"] for r in read_jsonl(audit)}
        assert outcomes["train:3"] == "filtered:unparseable"
        assert outcomes["train:2"] == "emitted"

    def test_strict_clean_drops_repaired(self, tmp_path, toy_kb, toy_train, toy_store,
                                         teacher_template, student_template, partial_reply_backend):
        summary, dataset, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                           student_template, backend=partial_reply_backend,
                                           filter_policy="strict-clean")
        outcomes = {r["uid"]: r["outcome"] for r in read_jsonl(audit)}
        assert outcomes["train:2"] == "filtered:not_clean"
        assert summary.emitted == 2
        assert all(r["meta"]["clean"] for r in read_jsonl(dataset))

    def test_keep_all_falls_back_to_retrieval_order(self, tmp_path, toy_kb, toy_train, toy_store,
                                                    teacher_template, student_template, partial_reply_backend):
        summary, dataset, _ = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                       student_template, backend=partial_reply_backend,
                                       filter_policy="keep-all")
        records = {r["meta"]["mention_uid"]: r for r in read_jsonl(dataset)}
        assert summary.emitted == 4  # size == limit exactly under keep-all
        assert records["train:3"]["meta"]["ranked_ids"] == records["train:3"]["meta"]["candidate_ids"]
        assert records["train:3"]["meta"]["clean"] is False

    def test_backend_failure_recorded_run_continues(self, tmp_path, toy_kb, toy_train, toy_store,
                                                    teacher_template, student_template):
        def full(prompt):
            return "\n".join(f"{i}. {lab}" for i, lab in enumerate(prompt.candidate_labels, 1))

        # no reply scripted for train:2 -> BackendError for that mention
        replies = {uid: full for uid in ("train:1", "train:3", "train:4")}
        backend = scripted_for(toy_train, toy_kb, toy_store, teacher_template, replies)
        summary, _, audit = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template,
                                     student_template, backend=backend, filter_policy="keep-all")
        outcomes = {r["uid"]: r["outcome"] for r in read_jsonl(audit)}
        assert outcomes["train:2"] == "failed:backend"
        assert summary.backend_failures == 1
        assert summary.emitted == 3

    def test_unknown_policy_rejected(self, tmp_path, toy_kb, toy_train, toy_store,
                                     teacher_template, student_template):
        with pytest.raises(ConfigError, match="filter policy"):
            generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template, student_template,
                     filter_policy="yolo")


class TestValidateDataset:
    @pytest.fixture()
    def dataset(self, tmp_path, toy_kb, toy_train, toy_store, teacher_template, student_template):
        _, dataset, _ = generate(tmp_path, toy_train, toy_kb, toy_store, teacher_template, student_template)
        return dataset

    def test_fresh_dataset_passes(self, dataset):
        report = validate_dataset(dataset)
        assert report.ok
        assert report.records == 4
        assert report.warnings == []

    def test_short_output_fails_naming_the_record(self, dataset):
        records = read_jsonl(dataset)
        records[2]["output"] = "\n".join(records[2]["output"].splitlines()[:5])
        dataset.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))
        report = validate_dataset(dataset)
        assert not report.ok
        assert any(line == 3 and "permutation" in msg for line, msg in report.problems)

    def test_duplicate_uid_warns(self, dataset):
        records = read_jsonl(dataset)
        records.append(records[0])
        dataset.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))
        report = validate_dataset(dataset)
        assert report.ok
        assert any("train:1" in w for w in report.warnings)

    def test_ranked_ids_must_match_output_order(self, dataset):
        records = read_jsonl(dataset)
        records[0]["meta"]["ranked_ids"] = list(reversed(records[0]["meta"]["ranked_ids"]))
        dataset.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records))
        report = validate_dataset(dataset)
        assert any("disagrees" in msg for _, msg in report.problems)

    def test_bad_json_line(self, dataset):
        with open(dataset, "a", encoding="utf-8") as f:
            f.write("{oops\n")
        report = validate_dataset(dataset)
        assert any("bad JSON" in msg for _, msg in report.problems)

    def test_missing_keys(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"instruction": "x"}\n')
        report = validate_dataset(path)
        assert any("missing keys" in msg for _, msg in report.problems)
