import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embsearch import data, similarity
from embsearch.errors import DimMismatch, KOutOfRange, NotNormalized
from conftest import unit_rows


def norm_matrix(arr):
    return data.EmbeddingMatrix(np.asarray(arr, dtype=np.float32), normalized=True)


def sort_oracle(scores):
    """Naive full sort of one score row, ties toward the lower gallery id."""
    return sorted(range(len(scores)), key=lambda g: (-scores[g], g))


class TestSimilarityMatrix:
    def test_orthonormal_basis(self):
        q = norm_matrix([[1.0, 0.0]])
        g = norm_matrix([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(similarity.similarity_matrix(q, g), [[1.0, 0.0]])

    def test_hand_dot_product(self):
        q = norm_matrix([[0.6, 0.8]])
        g = norm_matrix([[0.8, 0.6]])
        sims = similarity.similarity_matrix(q, g)
        assert sims[0, 0] == pytest.approx(0.96, abs=1e-7)

    def test_self_similarity(self):
        rows = unit_rows(5, 16, np.random.default_rng(2))
        m = norm_matrix(rows)
        sims = similarity.similarity_matrix(m, m)
        np.testing.assert_allclose(np.diag(sims), 1.0, atol=1e-6)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(3)
        q = norm_matrix(unit_rows(7, 8, rng))
        g = norm_matrix(unit_rows(9, 8, rng))
        a = similarity.similarity_matrix(q, g)
        b = similarity.similarity_matrix(g, q)
        np.testing.assert_allclose(a, b.T, atol=1e-6)

    def test_requires_normalized(self):
        raw = data.EmbeddingMatrix(np.ones((2, 2), dtype=np.float32), normalized=False)
        with pytest.raises(NotNormalized):
            similarity.similarity_matrix(raw, raw)

    def test_dim_mismatch(self):
        q = norm_matrix(np.ones((1, 2)))
        g = norm_matrix(np.ones((1, 3)))
        with pytest.raises(DimMismatch):
            similarity.similarity_matrix(q, g)

    def test_unit_inputs_bound_scores(self):
        rng = np.random.default_rng(4)
        q = norm_matrix(unit_rows(20, 6, rng))
        g = norm_matrix(unit_rows(30, 6, rng))
        sims = similarity.similarity_matrix(q, g)
        assert np.all(sims >= -1 - 1e-5) and np.all(sims <= 1 + 1e-5)


class TestTopK:
    def test_tie_break_lower_gallery_id(self):
        sims = np.array([[0.2, 0.9, 0.9, 0.1]], dtype=np.float32)
        [rl] = similarity.top_k(sims, 2)
        assert [g for g, _ in rl.entries] == [1, 2]

    def test_full_depth_is_permutation(self):
        rng = np.random.default_rng(5)
        sims = rng.random((4, 6)).astype(np.float32)
        lists = similarity.top_k(sims, 6)
        for rl in lists:
            assert sorted(g for g, _ in rl.entries) == list(range(6))

    def test_k_out_of_range(self):
        sims = np.zeros((1, 3), dtype=np.float32)
        for k in (0, 4):
            with pytest.raises(KOutOfRange):
                similarity.top_k(sims, k)

    def test_matches_full_sort_oracle_100x50(self):
        rng = np.random.default_rng(6)
        # quantized scores force plenty of ties
        sims = np.round(rng.random((100, 50)), 2).astype(np.float32)
        lists = similarity.top_k(sims, 10)
        for rl in lists:
            expected = sort_oracle(sims[rl.query_id])[:10]
            assert [g for g, _ in rl.entries] == expected

    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        n_q=st.integers(1, 12),
        n_g=st.integers(1, 40),
        data_=st.data(),
    )
    def test_oracle_property(self, seed, n_q, n_g, data_):
        k = data_.draw(st.integers(1, n_g))
        rng = np.random.default_rng(seed)
        sims = np.round(rng.random((n_q, n_g)), 1).astype(np.float32)
        lists = similarity.top_k(sims, k)
        for rl in lists:
            assert [g for g, _ in rl.entries] == sort_oracle(sims[rl.query_id])[:k]

    def test_scores_non_increasing(self):
        rng = np.random.default_rng(7)
        sims = rng.random((10, 20)).astype(np.float32)
        for rl in similarity.top_k(sims, 20):
            scores = [s for _, s in rl.entries]
            assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_zero_noise_returns_ground_truth(self, make_dataset):
        cfg = data.SynthConfig(12, 8, 0.0, 0.0, 0.5, seed=9)
        manifest = make_dataset(cfg)
        q = data.l2_normalize(data.load_embeddings(manifest, "query"))
        g = data.l2_normalize(data.load_embeddings(manifest, "gallery"))
        lists = similarity.top_k(similarity.similarity_matrix(q, g), 1)
        for rl in lists:
            assert rl.entries[0][0] == manifest.ground_truth[rl.query_id]


class TestRankedListIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        sims = rng.random((5, 7)).astype(np.float32)
        lists = similarity.top_k(sims, 7)
        path = tmp_path / "ranked.tsv"
        similarity.write_ranked_lists(path, lists, meta={"seed": 8})
        back = similarity.read_ranked_lists(path)
        assert len(back) == len(lists)
        for a, b in zip(lists, back):
            assert a.query_id == b.query_id
            assert [g for g, _ in a.entries] == [g for g, _ in b.entries]
            # 9 significant digits round-trip float32 exactly
            for (_, sa), (_, sb) in zip(a.entries, b.entries):
                assert np.float32(sa) == np.float32(sb)

    def test_write_is_deterministic(self, tmp_path):
        sims = np.random.default_rng(10).random((3, 4)).astype(np.float32)
        lists = similarity.top_k(sims, 4)
        similarity.write_ranked_lists(tmp_path / "a.tsv", lists, meta={"k": 4})
        similarity.write_ranked_lists(tmp_path / "b.tsv", lists, meta={"k": 4})
        assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
