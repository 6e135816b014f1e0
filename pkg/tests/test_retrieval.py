import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craft.errors import DimensionError, FormatError, ValidationError
from craft.model import Transformer, sample_noise
from craft.retrieval import (
    index_build,
    index_load,
    index_save,
    knn_query,
    merge_min_distance,
    recommend,
)

from oracles import naive_knn


def matches_oracle(index, q, k, tol=1e-9):
    got = knn_query(index, q, k)
    want = naive_knn(index.features, list(index.ids), q, k)
    return [i for i, _ in got] == [i for i, _ in want] and all(abs(a[1] - b[1]) < tol for a, b in zip(got, want))


class TestKnn:
    def test_singleton(self):
        idx = index_build([[1.0, 2.0]], ["only"])
        assert knn_query(idx, [4.0, 6.0], 1) == [("only", 5.0)]

    def test_duplicate_ids(self):
        with pytest.raises(ValidationError, match="'a'"):
            index_build(np.zeros((3, 2)), ["a", "b", "a"])

    def test_exact_hit(self):
        x = np.random.default_rng(0).normal(size=(40, 3))
        idx = index_build(x)
        ident, d = knn_query(idx, x[17], 1)[0]
        assert ident == "17" and d == 0.0

    def test_ordering_by_distance(self):
        idx = index_build([[0.0], [1.0], [3.0]])
        assert [i for i, _ in knn_query(idx, [0.9], 2)] == ["1", "0"]

    def test_k_too_large(self):
        idx = index_build(np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            knn_query(idx, [0.0, 0.0], 4)
        with pytest.raises(ValidationError):
            knn_query(idx, [0.0, 0.0], 0)

    def test_query_dimension(self):
        with pytest.raises(DimensionError):
            knn_query(index_build(np.zeros((3, 2))), [0.0], 1)

    def test_ties_break_by_numeric_id(self):
        # ids 10 and 9 sit at the same distance; 9 < 10 numerically though "10" < "9" as text
        idx = index_build([[1.0], [-1.0], [5.0]], ["10", "9", "2"])
        assert [i for i, _ in knn_query(idx, [0.0], 2)] == ["9", "10"]

    def test_ties_beyond_partition_boundary(self):
        x = np.ones((50, 2))
        idx = index_build(x, [str(49 - i) for i in range(50)])
        assert [i for i, _ in knn_query(idx, [0.0, 0.0], 3)] == ["0", "1", "2"]

    def test_text_ids_sort_lexically_on_ties(self):
        idx = index_build([[1.0], [-1.0]], ["b", "a"])
        assert [i for i, _ in knn_query(idx, [0.0], 2)] == ["a", "b"]

    def test_features_read_only(self):
        idx = index_build(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            idx.features[0, 0] = 1.0

    def test_against_full_scan(self):
        rng = np.random.default_rng(1)
        idx = index_build(rng.normal(size=(500, 16)))
        assert all(matches_oracle(idx, q, 10) for q in rng.normal(size=(50, 16)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 1000), st.integers(1, 64), st.integers(1, 20), st.integers(0, 2**32 - 1), st.booleans())
    def test_property_full_scan(self, m, d, k, seed, coarse):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(m, d))
        if coarse:
            x = np.round(x)  # many exact ties
        idx = index_build(x)
        k = min(k, m)
        q = np.round(rng.normal(size=d)) if coarse else rng.normal(size=d)
        assert matches_oracle(idx, q, k)


class TestRecommend:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.phi = Transformer(2, 8, 3, hidden=(16, 16), rng=rng)
        self.index = index_build(rng.normal(size=(200, 3)))
        self.s = np.array([0.5, -1.0])

    def test_single_sample_single_neighbor(self):
        recs = recommend(self.phi, self.index, self.s, n_samples=1, k_per_sample=1, rng=np.random.default_rng(9))
        z = sample_noise(np.random.default_rng(9), 8, 1)
        t = self.phi.transform(self.s[None], z)[0]
        assert recs == knn_query(self.index, t, 1)

    def test_merge_keeps_minimum(self):
        merged = merge_min_distance([("a", 2.0), ("b", 1.0), ("a", 0.5), ("b", 3.0)])
        assert merged == {"a": 0.5, "b": 1.0}

    def test_one_entry_per_item_sorted(self):
        recs = recommend(self.phi, self.index, self.s, n_samples=30, k_per_sample=3, rng=np.random.default_rng(0))
        ids = [i for i, _ in recs]
        assert len(ids) == len(set(ids)) and 1 <= len(ids) <= 90
        assert all(a[1] <= b[1] for a, b in zip(recs, recs[1:]))

    def test_merge_matches_manual(self):
        rng = np.random.default_rng(4)
        recs = recommend(self.phi, self.index, self.s, n_samples=10, k_per_sample=2, rng=rng)
        z = sample_noise(np.random.default_rng(4), 8, 10)
        hits = {}
        for t in self.phi.transform(np.tile(self.s, (10, 1)), z):
            for ident, d in naive_knn(self.index.features, list(self.index.ids), t, 2):
                hits[ident] = min(d, hits.get(ident, np.inf))
        assert {i for i, _ in recs} == set(hits)
        assert all(abs(d - hits[i]) < 1e-9 for i, d in recs)

    def test_seed_reproducible(self):
        a = recommend(self.phi, self.index, self.s, rng=np.random.default_rng(5))
        b = recommend(self.phi, self.index, self.s, rng=np.random.default_rng(5))
        assert a == b

    def test_invalid_counts(self):
        with pytest.raises(ValidationError):
            recommend(self.phi, self.index, self.s, n_samples=0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            recommend(self.phi, index_build(np.zeros((3, 2))), self.s)


class TestIndexFile:
    def test_round_trip_bitwise(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(30, 5))
        idx = index_build(x, [f"x{i}" for i in range(30)])
        index_save(idx, tmp_path / "a")
        back = index_load(tmp_path / "a")
        assert back.features.tobytes() == x.tobytes() and back.ids == idx.ids
        index_save(back, tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_truncated(self, tmp_path):
        index_save(index_build(np.ones((4, 2))), tmp_path / "a")
        raw = (tmp_path / "a").read_bytes()
        (tmp_path / "t").write_bytes(raw[:-7])
        with pytest.raises(FormatError):
            index_load(tmp_path / "t")
