import json

import numpy as np
import pytest

from bioelink import corpus, embedstore, evalharness, promptkit, teacher
from bioelink.embedstore import lookup
from bioelink.errors import ValidationError
from bioelink.evalharness import acc_at_k, recall_at_k, run_eval
from bioelink.retriever import CandidateRetriever, CandidateSet


def lists_with_gold_at_ranks(ranks, depth=6):
    """One ranked list per rank: gold 'G' at the given 1-based position."""
    lists = []
    for r in ranks:
        order = [f"x{i}" for i in range(depth)]
        order[r - 1] = "G"
        lists.append(order)
    return lists, ["G"] * len(ranks)


class TestAccAtK:
    def test_hand_traced_ranks(self):
        lists, golds = lists_with_gold_at_ranks([1, 1, 1, 3])
        assert acc_at_k(lists, golds, 1) == 0.75
        assert acc_at_k(lists, golds, 5) == 1.0

    def test_gold_absent_everywhere(self):
        lists = [["a", "b"], ["c", "d"]]
        assert acc_at_k(lists, ["G", "G"], 1) == 0.0
        assert acc_at_k(lists, ["G", "G"], 5) == 0.0

    def test_k_beyond_list_length(self):
        lists, golds = lists_with_gold_at_ranks([4], depth=4)
        assert acc_at_k(lists, golds, 99) == acc_at_k(lists, golds, 4) == 1.0

    def test_empty_input_undefined(self):
        with pytest.raises(ValidationError, match="undefined"):
            acc_at_k([], [], 1)

    def test_monotone_in_k(self):
        lists, golds = lists_with_gold_at_ranks([1, 2, 3, 4, 5, 6])
        values = [acc_at_k(lists, golds, k) for k in range(1, 8)]
        assert values == sorted(values)


class TestRecallAtK:
    def test_always_and_never(self):
        cs = [CandidateSet("m", [("G", 1.0), ("x", 0.5)], 2, "dot")]
        assert recall_at_k(cs, ["G"]) == 1.0
        assert recall_at_k(cs, ["Z"]) == 0.0

    def test_empty_input_undefined(self):
        with pytest.raises(ValidationError):
            recall_at_k([], [])

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(17)
        kb = corpus.KnowledgeBase([corpus.Entity(f"E{i}", f"n{i}") for i in range(30)])
        vectors = (rng.integers(-8, 9, size=(30, 5)) / 4.0).astype(np.float32)
        store = embedstore.EmbeddingStore([e.id for e in kb], vectors)
        retr = CandidateRetriever(store, kb)
        golds, sets = [], []
        hits = 0
        for t in range(25):
            mvec = (rng.integers(-8, 9, size=5) / 4.0).astype(np.float32)
            gold = f"E{int(rng.integers(0, 30))}"
            cs = retr.top_k(mvec, 6)
            sets.append(cs)
            golds.append(gold)
            # oracle: count by direct enumeration of all N scores
            scores = [(float(sum(float(a) * float(b) for a, b in zip(mvec, vectors[i]))), i)
                      for i in range(30)]
            scores.sort(key=lambda t: (-t[0], t[1]))
            top_ids = {f"E{i}" for _, i in scores[:6]}
            hits += gold in top_ids
        assert recall_at_k(sets, golds) == hits / 25


def run(tmp_path, mentions, kb, store, backend, template, **kw):
    defaults = dict(model="mock-teacher", k=6, acc_ks=(1, 5), trace_path=tmp_path / "trace.jsonl")
    defaults.update(kw)
    return run_eval(mentions, kb, store, backend, template, **defaults)


class TestRunEval:
    def test_identity_backend_matches_retrieval_ranks(self, tmp_path, toy_kb, toy_test, toy_store,
                                                      student_template):
        report = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), student_template)
        # retrieval gold ranks on the toy test split are [1, 1, 2, 7]
        assert report.acc_at == {1: 0.5, 5: 0.75}
        assert report.recall_at_k_candidates == 0.75
        assert report.n_evaluated == 4 and report.n_skipped == 0
        # cross-check against ranks recomputed from the store
        retr = CandidateRetriever(toy_store, toy_kb)
        for k in (1, 5):
            hits = 0
            for m in toy_test:
                ids = retr.top_k(lookup(toy_store, m.uid), 6).entity_ids
                hits += m.gold_id in ids[:k]
            assert report.acc_at[k] == hits / len(toy_test)

    def test_oracle_acc1_equals_recall(self, tmp_path, toy_kb, toy_test, toy_store, student_template):
        backend = teacher.OracleMockBackend.from_mentions(toy_test, toy_kb)
        report = run(tmp_path, toy_test, toy_kb, toy_store, backend, student_template)
        assert report.acc_at[1] == report.recall_at_k_candidates == 0.75

    def test_reverse_backend_sandwich_still_holds(self, tmp_path, toy_kb, toy_test, toy_store,
                                                  student_template):
        report = run(tmp_path, toy_test, toy_kb, toy_store, teacher.ReverseMockBackend(), student_template)
        assert report.acc_at == {1: 0.0, 5: 0.25}
        assert report.acc_at[1] <= report.acc_at[5] <= report.recall_at_k_candidates

    def test_no_reranker_exceeds_recall(self, tmp_path, toy_kb, toy_test, toy_store, student_template):
        for backend in (teacher.IdentityMockBackend(), teacher.ReverseMockBackend(),
                        teacher.OracleMockBackend.from_mentions(toy_test, toy_kb)):
            report = run(tmp_path, toy_test, toy_kb, toy_store, backend, student_template)
            for k, acc in report.acc_at.items():
                assert acc <= report.recall_at_k_candidates

    def test_teacher_template_also_works(self, tmp_path, toy_kb, toy_test, toy_store, teacher_template):
        report = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), teacher_template)
        assert report.acc_at == {1: 0.5, 5: 0.75}

    def test_mentions_without_gold_are_skipped(self, tmp_path, toy_kb, toy_test, toy_store, student_template):
        unlabeled = corpus.Mention(uid="test:9", surface="odd feeling", context=None, gold_id=None, split="test")
        store = embedstore.merge(toy_store, embedstore.EmbeddingStore(
            ["test:9"], np.full((1, 12), 0.5, dtype=np.float32)))
        report = run(tmp_path, toy_test + [unlabeled], toy_kb, store,
                     teacher.IdentityMockBackend(), student_template)
        assert report.n_evaluated == 4 and report.n_skipped == 1
        trace = [json.loads(l) for l in (tmp_path / "trace.jsonl").read_text().splitlines()]
        assert len(trace) == 5  # skipped mention still traced

    def test_unresolvable_gold_default_counts_as_miss(self, tmp_path, toy_kb, toy_test, toy_store,
                                                      student_template):
        bad = corpus.Mention(uid="test:9", surface="odd feeling", context=None, gold_id="E99", split="test")
        store = embedstore.merge(toy_store, embedstore.EmbeddingStore(
            ["test:9"], np.full((1, 12), 0.5, dtype=np.float32)))
        mentions = toy_test + [bad]
        default = run(tmp_path, mentions, toy_kb, store, teacher.IdentityMockBackend(), student_template)
        assert default.n_evaluated == 5
        assert default.acc_at[1] == 2 / 5
        strict = run(tmp_path, mentions, toy_kb, store, teacher.IdentityMockBackend(), student_template,
                     strict_gold=True)
        assert strict.n_evaluated == 4 and strict.n_skipped == 1
        assert strict.acc_at[1] == 0.5

    def test_backend_failure_counts_as_miss_and_is_traced(self, tmp_path, toy_kb, toy_test, toy_store,
                                                          student_template):
        retr = CandidateRetriever(toy_store, toy_kb)
        script = {}
        for m in toy_test[1:]:  # no reply for test:1
            cs = retr.top_k(lookup(toy_store, m.uid), 6, mention_uid=m.uid)
            prompt = promptkit.render_student(student_template, m, cs, toy_kb)
            script[prompt.text] = "\n".join(f"{i}. {l}" for i, l in enumerate(prompt.candidate_labels, 1))
        report = run(tmp_path, toy_test, toy_kb, toy_store, teacher.ScriptedBackend(script), student_template)
        assert report.n_evaluated == 4
        assert report.acc_at[1] == 0.25  # test:1 (gold at rank 1) became a miss
        trace = {json.loads(l)["uid"]: json.loads(l) for l in (tmp_path / "trace.jsonl").read_text().splitlines()}
        assert trace["test:1"]["outcome"].startswith("backend_error")
        assert trace["test:1"]["ranked"] is None

    def test_warm_cache_reruns_are_byte_identical(self, tmp_path, toy_kb, toy_test, toy_store,
                                                  student_template):
        cache = teacher.CompletionCache(tmp_path / "cache")
        r1 = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), student_template,
                 cache=cache, trace_path=tmp_path / "t1.jsonl")
        r2 = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), student_template,
                 cache=cache, trace_path=tmp_path / "t2.jsonl")
        assert (tmp_path / "t1.jsonl").read_bytes() == (tmp_path / "t2.jsonl").read_bytes()
        d1, d2 = r1.to_dict(), r2.to_dict()
        d1["trace"] = d2["trace"] = ""
        assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)

    def test_all_golds_missing_is_undefined(self, tmp_path, toy_kb, toy_store, student_template):
        unlabeled = corpus.Mention(uid="test:9", surface="odd", context=None, gold_id=None, split="test")
        store = embedstore.merge(toy_store, embedstore.EmbeddingStore(
            ["test:9"], np.full((1, 12), 0.5, dtype=np.float32)))
        with pytest.raises(ValidationError, match="undefined"):
            run(tmp_path, [unlabeled], toy_kb, store, teacher.IdentityMockBackend(), student_template)

    def test_parallel_matches_serial(self, tmp_path, toy_kb, toy_test, toy_store, student_template):
        serial = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), student_template,
                     trace_path=tmp_path / "s.jsonl")
        parallel = run(tmp_path, toy_test, toy_kb, toy_store, teacher.IdentityMockBackend(), student_template,
                       trace_path=tmp_path / "p.jsonl", parallelism=4)
        assert (tmp_path / "s.jsonl").read_bytes() == (tmp_path / "p.jsonl").read_bytes()
        assert serial.acc_at == parallel.acc_at
