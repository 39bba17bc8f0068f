import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nlbinscatter.errors import DegeneratePartition, OutOfSupport, QuasiUniformityWarning
from nlbinscatter.partition import (
    Partition,
    assign_bins,
    check_quasi_uniform,
    even_knots,
    make_partition,
    quantile_knots,
    quasi_uniform_ratio,
    user_knots,
)


def quantile_oracle(x, J):
    """Generalized inverse of the empirical CDF evaluated by brute force."""
    xs = np.sort(x)
    n = xs.size
    knots = [xs[0]]
    for j in range(1, J):
        knots.append(min(u for u in xs if np.sum(xs <= u) / n >= j / J))
    knots.append(xs[-1])
    return np.array(knots)


class TestQuantileKnots:
    def test_four_points_two_bins(self):
        part = quantile_knots([0.1, 0.2, 0.3, 0.4], 2)
        np.testing.assert_array_equal(part.knots, [0.1, 0.2, 0.4])

    def test_single_bin_is_range(self, rng):
        x = rng.normal(size=50)
        np.testing.assert_array_equal(quantile_knots(x, 1).knots, [x.min(), x.max()])

    def test_uniform_quartiles(self, rng):
        x = rng.uniform(size=1000)
        inner = quantile_knots(x, 4).knots[1:-1]
        assert np.all(np.abs(inner - [0.25, 0.5, 0.75]) <= 0.05)

    def test_ties_raise(self):
        with pytest.raises(DegeneratePartition):
            quantile_knots([0, 0, 0, 0, 1], 3)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(5, 60), st.integers(1, 5), st.integers(0, 10_000))
    def test_matches_brute_force(self, n, J, seed):
        assume(n >= 2 * J)
        x = np.random.default_rng(seed).uniform(size=n)
        np.testing.assert_array_equal(quantile_knots(x, J).knots, quantile_oracle(x, J))


class TestEvenKnots:
    def test_unit_interval(self):
        np.testing.assert_allclose(even_knots([0, 0.3, 1], 4).knots, [0, 0.25, 0.5, 0.75, 1])

    def test_symmetric_interval(self):
        np.testing.assert_allclose(even_knots([-2, 2], 2).knots, [-2, 0, 2])

    def test_single_bin(self):
        np.testing.assert_array_equal(even_knots([3.0, 1.0, 2.0], 1).knots, [1.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4))
    def test_refinement_nests(self, J, factor):
        x = np.array([0.0, 1.0])
        coarse = even_knots(x, J).knots
        fine = even_knots(x, J * factor).knots
        assert all(np.isclose(fine, k, atol=1e-14).any() for k in coarse)


class TestAssignBins:
    knots = Partition(np.array([0.0, 0.5, 1.0]), "user")

    def test_left_closed(self):
        assert assign_bins(self.knots, 0.5) == 2

    def test_last_bin_closed(self):
        assert assign_bins(self.knots, 1.0) == 2

    def test_just_below_knot(self):
        assert assign_bins(self.knots, 0.49999) == 1

    def test_outside_raises(self):
        with pytest.raises(OutOfSupport):
            assign_bins(self.knots, 1.0001)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    def test_point_lies_in_its_bin(self, xs):
        idx = assign_bins(self.knots, np.array(xs))
        k = self.knots.knots
        for x, j in zip(xs, idx):
            assert k[j - 1] <= x <= k[j]
            assert x < k[j] or j == 2


class TestQuasiUniform:
    def test_ratio(self):
        assert quasi_uniform_ratio(user_knots([0, 0.2, 0.5, 1])) == pytest.approx(2.5)

    def test_even_ratio_is_one(self):
        assert quasi_uniform_ratio(even_knots([0, 1], 7)) == pytest.approx(1.0)

    def test_extreme_ratio_warns(self):
        part = user_knots([0, 0.01, 1])
        assert quasi_uniform_ratio(part) == pytest.approx(99.0)
        with pytest.warns(QuasiUniformityWarning):
            check_quasi_uniform(part)

    def test_no_warning_below_threshold(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            check_quasi_uniform(user_knots([0, 0.2, 0.5, 1]))


class TestPartitionType:
    def test_unsorted_knots_rejected(self):
        with pytest.raises(DegeneratePartition):
            user_knots([0, 0.5, 0.4, 1])

    def test_make_partition_dispatch(self, rng):
        x = rng.uniform(size=100)
        assert make_partition(x, 3, "quantile").scheme == "quantile"
        assert make_partition(x, 3, "even").scheme == "even"
        assert make_partition(x, 2, "user", knots=[0, 0.5, 1]).nbins == 2
