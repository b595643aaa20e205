import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embsearch import data, evaluation, similarity
from embsearch.errors import EmptyList, InvalidConfig, TooLarge
from embsearch.resolver import (
    ResolutionPolicy,
    assignment_oracle,
    detect_conflicts,
    resolve,
    resolution_to_lists,
    write_audit,
    write_resolution,
)
from embsearch.similarity import RankedList


def rl(qid, *pairs):
    return RankedList(query_id=qid, entries=[(g, float(s)) for g, s in pairs])


class TestDetectConflicts:
    def test_shared_rank1_answer(self):
        lists = [rl(0, (5, 0.9)), rl(1, (5, 0.8)), rl(2, (3, 0.7))]
        groups = detect_conflicts(lists, ResolutionPolicy(), {0: 0, 1: 0, 2: 0})
        assert len(groups) == 1
        assert groups[0].answer_id == 5
        assert [m[0] for m in groups[0].members] == [0, 1]

    def test_all_distinct(self):
        lists = [rl(0, (1, 0.9)), rl(1, (2, 0.8))]
        assert detect_conflicts(lists, ResolutionPolicy(), {0: 0, 1: 0}) == []

    def test_group_of_three(self):
        lists = [rl(0, (4, 0.9)), rl(1, (4, 0.8)), rl(2, (4, 0.7))]
        groups = detect_conflicts(lists, ResolutionPolicy(), {0: 0, 1: 0, 2: 0})
        assert len(groups) == 1
        assert len(groups[0].members) == 3

    def test_similarity_gate_filters_groups(self):
        lists = [rl(0, (4, 0.9)), rl(1, (4, 0.8))]
        # orthogonal query texts: gate excludes the group
        emb = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        policy = ResolutionPolicy(similarity_gate=0.5)
        assert detect_conflicts(lists, policy, {0: 0, 1: 0}, query_embeddings=emb) == []
        # near-parallel texts: group survives
        emb2 = np.array([[1.0, 0.0], [0.99, 0.1]], dtype=np.float32)
        groups = detect_conflicts(lists, policy, {0: 0, 1: 0}, query_embeddings=emb2)
        assert len(groups) == 1

    def test_gate_without_embeddings(self):
        lists = [rl(0, (4, 0.9)), rl(1, (4, 0.8))]
        with pytest.raises(InvalidConfig):
            detect_conflicts(lists, ResolutionPolicy(similarity_gate=0.5), {0: 0, 1: 0})


class TestResolve:
    def test_two_query_hand_trace(self):
        lists = [
            rl(1, (100, 0.9), (102, 0.6)),
            rl(2, (100, 0.8), (101, 0.7)),
        ]
        res = resolve(lists)
        assert res.assignments[1] == (100, 0.9, 1)
        assert res.assignments[2] == (101, 0.7, 2)
        assert len(res.audit) == 1
        entry = res.audit[0]
        assert entry.winner == 1 and entry.loser == 2 and entry.answer_id == 100
        assert entry.delta_s == pytest.approx(0.1)
        assert not res.unresolved

    def test_cascading_three_query_trace(self):
        lists = [
            rl(1, (100, 0.9), (103, 0.5), (104, 0.4)),
            rl(2, (100, 0.8), (101, 0.7), (105, 0.3)),
            rl(3, (101, 0.75), (102, 0.5), (106, 0.2)),
        ]
        res = resolve(lists)
        # round 1: q2 loses answer 100 to q1; round 2: q2 loses 101 to q3
        assert res.assignments[1] == (100, 0.9, 1)
        assert res.assignments[2] == (105, 0.3, 3)
        assert res.assignments[3] == (101, 0.75, 1)
        assert [(e.round, e.answer_id, e.winner, e.loser) for e in res.audit] == [
            (1, 100, 1, 2),
            (2, 101, 3, 2),
        ]
        assert res.audit[0].delta_s == pytest.approx(0.1)
        assert res.audit[1].delta_s == pytest.approx(0.05)

    def test_no_collisions_is_identity(self):
        lists = [rl(0, (1, 0.9), (2, 0.5)), rl(1, (3, 0.8), (4, 0.4))]
        res = resolve(lists)
        assert res.assignments == {0: (1, 0.9, 1), 1: (3, 0.8, 1)}
        assert res.audit == []
        assert res.rounds == 0

    def test_score_tie_lower_query_id_keeps(self):
        lists = [rl(5, (9, 0.8), (1, 0.5)), rl(2, (9, 0.8), (3, 0.5))]
        res = resolve(lists)
        assert res.assignments[2][0] == 9
        assert res.assignments[5][0] == 1
        assert res.audit[0].delta_s == 0.0

    def test_exhaustion_keeps_last_entry_and_flags(self):
        lists = [rl(0, (7, 0.9)), rl(1, (7, 0.8))]
        res = resolve(lists)
        assert res.assignments[1] == (7, 0.8, 1)
        assert res.unresolved == {1}

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyList):
            resolve([])
        with pytest.raises(EmptyList):
            resolve([RankedList(query_id=0, entries=[])])

    def test_input_order_invariance(self):
        lists = [
            rl(3, (1, 0.6), (2, 0.5)),
            rl(1, (1, 0.9), (4, 0.2)),
            rl(2, (1, 0.7), (5, 0.4)),
        ]
        a = resolve(lists)
        b = resolve(list(reversed(lists)))
        assert a.assignments == b.assignments
        assert [(e.round, e.answer_id, e.winner, e.loser) for e in a.audit] == [
            (e.round, e.answer_id, e.winner, e.loser) for e in b.audit
        ]

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 10))
    def test_never_invents_answers(self, seed, n):
        sims = np.random.default_rng(seed).random((n, n)).astype(np.float32)
        lists = similarity.top_k(sims, n)
        res = resolve(lists)
        originals = {rl_.query_id: set(g for g, _ in rl_.entries) for rl_ in lists}
        for qid, (gid, score, source_rank) in res.assignments.items():
            assert gid in originals[qid]
            assert lists[qid].entries[source_rank - 1] == (gid, score)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 12))
    def test_full_depth_conflict_set_answers_distinct(self, seed, n):
        sims = np.random.default_rng(seed).random((n, n)).astype(np.float32)
        lists = similarity.top_k(sims, n)
        res = resolve(lists)
        if res.unresolved or res.rounds >= n:
            return
        conflicted = {e.loser for e in res.audit} | {e.winner for e in res.audit}
        answers = [res.assignments[q][0] for q in conflicted]
        assert len(answers) == len(set(answers))

    def test_untouched_queries_keep_rank1(self):
        sims = np.random.default_rng(3).random((8, 8)).astype(np.float32)
        lists = similarity.top_k(sims, 8)
        res = resolve(lists)
        touched = {e.loser for e in res.audit}
        for rl_ in lists:
            if rl_.query_id not in touched:
                assert res.assignments[rl_.query_id][0] == rl_.entries[0][0]


class TestAssignmentOracle:
    def test_hand_2x2(self):
        sims = np.array([[0.9, 0.1], [0.8, 0.7]], dtype=np.float32)
        assign, total = assignment_oracle(sims, "exhaustive")
        assert assign == {0: 0, 1: 1}
        assert total == pytest.approx(1.6, abs=1e-6)

    def test_identity_matrix_diagonal(self):
        assign, total = assignment_oracle(np.eye(5, dtype=np.float32), "matching")
        assert assign == {i: i for i in range(5)}
        assert total == pytest.approx(5.0)

    def test_matching_equals_exhaustive_8x8(self):
        for seed in range(5):
            sims = np.random.default_rng(seed).random((8, 8)).astype(np.float32)
            _, exhaustive_total = assignment_oracle(sims, "exhaustive")
            _, matching_total = assignment_oracle(sims, "matching")
            assert matching_total == pytest.approx(exhaustive_total, abs=1e-9)

    def test_too_large_for_exhaustive(self):
        with pytest.raises(TooLarge):
            assignment_oracle(np.zeros((13, 13), dtype=np.float32), "exhaustive")

    def test_rectangular_instances(self):
        sims = np.random.default_rng(9).random((3, 6)).astype(np.float32)
        _, exhaustive_total = assignment_oracle(sims, "exhaustive")
        _, matching_total = assignment_oracle(sims, "matching")
        assert matching_total == pytest.approx(exhaustive_total, abs=1e-9)
        with pytest.raises(InvalidConfig):
            assignment_oracle(sims.T, "matching")

    def test_oracle_upper_bounds_greedy(self):
        for seed in range(10):
            n = 4 + seed % 5
            sims = np.random.default_rng(100 + seed).random((n, n)).astype(np.float32)
            lists = similarity.top_k(sims, n)
            res = resolve(lists)
            greedy_total = sum(v[1] for v in res.assignments.values())
            _, optimal = assignment_oracle(sims, "matching")
            assert greedy_total <= optimal + 1e-6


class TestResolutionOutput:
    def test_resolved_lists_lead_with_assignment(self):
        lists = [
            rl(0, (1, 0.9), (2, 0.5), (3, 0.1)),
            rl(1, (1, 0.7), (4, 0.6), (5, 0.2)),
        ]
        res = resolve(lists)
        out, source_ranks = resolution_to_lists(lists, res)
        assert out[1].entries[0] == (4, 0.6)
        assert source_ranks[1] == [2, 1, 3]
        # untouched query keeps its order
        assert out[0].entries == lists[0].entries
        assert source_ranks[0] == [1, 2, 3]

    def test_write_files(self, tmp_path):
        lists = [rl(0, (1, 0.9), (2, 0.5)), rl(1, (1, 0.7), (4, 0.6))]
        res = resolve(lists)
        write_resolution(tmp_path / "resolved.tsv", lists, res, meta={"depth": 1})
        write_audit(tmp_path / "audit.tsv", res, meta={"depth": 1})
        resolved_lines = (tmp_path / "resolved.tsv").read_text().splitlines()
        assert any(line.split("\t")[:4] == ["1", "1", "4", "0.6"] for line in resolved_lines)
        audit_lines = [
            l for l in (tmp_path / "audit.tsv").read_text().splitlines()
            if not l.startswith("#")
        ]
        assert len(audit_lines) == 1
        round_, answer, winner, loser, delta = audit_lines[0].split("\t")
        assert (round_, answer, winner, loser) == ("1", "1", "0", "1")
        assert float(delta) == pytest.approx(0.2)

    def test_collision_free_round_trips(self, tmp_path):
        sims = np.diag([0.9, 0.8, 0.7]).astype(np.float32) + 0.05
        lists = similarity.top_k(sims, 3)
        res = resolve(lists)
        assert res.audit == []
        out, _ = resolution_to_lists(lists, res)
        assert [o.entries for o in out] == [l.entries for l in lists]
