import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import hilbert_oracle
from strategies import costs
from wassvec.core import (Coupling, CostMatrix, Dataset, Histogram, hilbert_metric, l1_distance,
                          linf_norm)


class TestHistogram:
    def test_renormalizes_small_deviation(self):
        h = Histogram([0.5, 0.5 + 5e-7])
        assert h.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_large_deviation(self):
        with pytest.raises(ValueError, match="deviates"):
            Histogram([0.5, 0.6])

    def test_rejects_negative(self):
        with pytest.raises(ValueError, match="negative"):
            Histogram([1.5, -0.5])

    def test_read_only(self):
        h = Histogram([0.25, 0.75])
        with pytest.raises(ValueError):
            h.weights[0] = 1.0

    def test_array_protocol(self):
        assert np.asarray(Histogram([1.0])).tolist() == [1.0]


class TestDataset:
    def test_shape_and_indexing(self):
        d = Dataset(np.array([[0.5, 1.0, 0.0], [0.5, 0.0, 1.0]]))
        assert (d.n, d.m) == (2, 3)
        assert d[1].weights.tolist() == [1.0, 0.0]
        assert d.distinct

    def test_duplicates_detected(self):
        d = Dataset(np.array([[0.5, 0.5], [0.5, 0.5]]))
        assert not d.distinct
        with pytest.raises(ValueError, match="identical"):
            d.require_distinct()

    def test_from_rows(self):
        d = Dataset.from_rows([[1.0, 0.0], [0.25, 0.75]], labels=["a", "b"])
        assert d.columns[:, 1].tolist() == [0.25, 0.75]
        assert d.labels == ["a", "b"]

    def test_label_count_checked(self):
        with pytest.raises(ValueError):
            Dataset(np.eye(2), labels=["x"])

    def test_from_histograms(self):
        d = Dataset([Histogram([1, 0]), Histogram([0, 1])])
        assert np.array_equal(d.columns, np.eye(2))


class TestCostMatrix:
    def test_mirrors_upper_triangle(self):
        C = np.array([[0, 1.0], [1.0 + 1e-14, 0]])
        S = CostMatrix(C).entries
        assert S[0, 1] == S[1, 0] == 1.0

    @pytest.mark.parametrize("bad, msg", [
        ([[0, -1.0], [-1.0, 0]], "negative"),
        ([[1.0, 1.0], [1.0, 0]], "diagonal"),
        ([[0, 1.0], [2.0, 0]], "symmetric"),
        ([[0, 1.0, 2.0]], "square"),
    ])
    def test_rejections(self, bad, msg):
        with pytest.raises(ValueError, match=msg):
            CostMatrix(bad)

    def test_positivity_flag_and_scaling(self):
        C = CostMatrix([[0, 2.0], [2.0, 0]])
        assert C.is_positive
        assert (0.5 * C).entries[0, 1] == 1.0
        assert not CostMatrix(np.zeros((2, 2))).is_positive


class TestCoupling:
    def test_support_threshold(self):
        P = np.array([[0.5, 1e-14], [0.0, 0.5 - 1e-14]])
        assert Coupling(P).support == {(0, 0), (1, 1)}

    def test_marginal_check(self):
        with pytest.raises(ValueError, match="source marginal"):
            Coupling(np.array([[0.5, 0], [0, 0.5]]), source=[0.6, 0.4])

    def test_from_sparse(self):
        c = Coupling.from_sparse([0, 1], [1, 0], [0.3, 0.7], 2, 2, [0.3, 0.7], [0.7, 0.3])
        assert c.plan[1, 0] == 0.7


def test_l1_and_linf():
    assert l1_distance([1, 0], [0, 1]) == 2.0
    assert linf_norm([[0, -3.0], [2.0, 0]]) == 3.0
    with pytest.raises(ValueError):
        l1_distance([1.0], [0.5, 0.5])


class TestHilbert:
    def test_scale_invariance_example(self):
        C = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0.0]])
        assert hilbert_metric(C, 7.0 * C) == pytest.approx(0.0, abs=1e-15)

    def test_rejects_zero_entries(self):
        with pytest.raises(ValueError):
            hilbert_metric(np.zeros((2, 2)), np.ones((2, 2)) - np.eye(2))

    @given(costs(4), costs(4), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_matches_oracle_and_is_projective(self, X, Y, s, t):
        d = hilbert_metric(X, Y)
        assert d == pytest.approx(hilbert_oracle(X, Y), rel=1e-12, abs=1e-12)
        assert hilbert_metric(s * X, t * Y) == pytest.approx(d, rel=1e-9, abs=1e-9)
        assert hilbert_metric(Y, X) == pytest.approx(d, rel=1e-12, abs=1e-12)
