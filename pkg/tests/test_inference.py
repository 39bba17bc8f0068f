import numpy as np
import pytest

from nlbinscatter.basis import BasisSpec
from nlbinscatter.covariance import covariance
from nlbinscatter.data import Dataset
from nlbinscatter.errors import InvalidDerivative, NoCommonSupport, ValidationError
from nlbinscatter.estimator import fit, predict_level
from nlbinscatter.inference import (
    InferenceConfig,
    compare_groups,
    confidence_band,
    critical_value,
    eval_grid,
    pointwise_ci,
    prepare,
    shape_test,
    sim_p_value,
    simulate_sup,
    spec_test,
)
from nlbinscatter.models import ModelSpec
from nlbinscatter.partition import quantile_knots, user_knots

from conftest import uniform_data

LS = ModelSpec("ls")
CFG = InferenceConfig(nsims=2000, seed=11)


def single_bin_cov(n=500, seed=0):
    data = uniform_data(n, seed=seed)
    return covariance(fit(data, BasisSpec(0, 0, quantile_knots(data.x, 1)), LS))


class TestSimulation:
    def test_single_bin_two_sided_quantile(self):
        sups = simulate_sup(single_bin_cov(), [0.5], nsims=200_000, seed=1)
        assert critical_value(sups, 0.05) == pytest.approx(1.96, abs=0.02)

    def test_single_bin_one_sided_quantile(self):
        sups = simulate_sup(single_bin_cov(), [0.5], sided="one", nsims=200_000, seed=1)
        assert critical_value(sups, 0.05) == pytest.approx(1.645, abs=0.02)

    def test_one_point_grid_is_abs_z(self):
        cov = single_bin_cov()
        from nlbinscatter.rng import normal_draws

        sups = simulate_sup(cov, [0.3], nsims=3000, seed=4)
        np.testing.assert_allclose(sups, np.abs(normal_draws(4, 0, 3000, 1)[:, 0]), rtol=1e-12)

    def test_thread_count_determinism(self):
        data = uniform_data(1000, seed=2)
        cov = covariance(fit(data, BasisSpec(1, 1, quantile_knots(data.x, 8)), LS))
        grid = eval_grid(quantile_knots(data.x, 8))
        base = simulate_sup(cov, grid, nsims=5000, seed=9)
        for jobs in (2, 3):
            np.testing.assert_array_equal(simulate_sup(cov, grid, nsims=5000, seed=9, n_jobs=jobs), base)

    def test_monotonicity(self):
        data = uniform_data(1000, seed=3)
        part = quantile_knots(data.x, 6)
        cov = covariance(fit(data, BasisSpec(1, 1, part), LS))
        coarse = eval_grid(part, 5)
        fine = np.union1d(coarse, eval_grid(part, 20))
        s_coarse = simulate_sup(cov, coarse, nsims=5000, seed=5)
        s_fine = simulate_sup(cov, fine, nsims=5000, seed=5)
        assert np.all(s_fine >= s_coarse - 1e-12)
        assert critical_value(s_fine, 0.05) >= critical_value(s_coarse, 0.05)
        cvals = [critical_value(s_fine, a) for a in (0.01, 0.05, 0.1, 0.5)]
        assert all(a >= b for a, b in zip(cvals, cvals[1:]))
        one = simulate_sup(cov, fine, sided="one", nsims=5000, seed=5)
        assert critical_value(one, 0.05) <= critical_value(s_fine, 0.05)

    def test_p_value_convention(self):
        sups = np.array([1.0, 2.0, 3.0, 4.0])
        assert sim_p_value(sups, 2.5) == pytest.approx(3 / 5)
        assert sim_p_value(sups, 10.0) == pytest.approx(1 / 5)
        assert sim_p_value(sups, 0.0) == 1.0

    def test_bad_inputs(self):
        cov = single_bin_cov()
        with pytest.raises(ValidationError):
            simulate_sup(cov, [], nsims=1000)
        with pytest.raises(ValidationError):
            simulate_sup(cov, [0.5], sided="left", nsims=1000)
        with pytest.raises(ValidationError):
            InferenceConfig(nsims=10)
        with pytest.raises(ValidationError):
            InferenceConfig(alpha=1.0)


class TestGrid:
    def test_points_per_bin_and_knots(self):
        part = user_knots([0, 1, 3])
        grid = eval_grid(part, 4)
        assert grid.size == 3 + 2 * 4
        assert set(part.knots) <= set(grid)
        np.testing.assert_allclose(grid[:6], [0, 0.2, 0.4, 0.6, 0.8, 1.0])


class TestBand:
    def test_noiseless_band_collapses(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=500)
        data = Dataset.from_arrays(1 + 2 * x, x)
        band = confidence_band(data, LS, 1, CFG, s=1, J=5)
        assert np.max(band.upper - band.lower) <= 1e-6
        np.testing.assert_allclose(band.center, 1 + 2 * band.grid, atol=1e-8)

    def test_identity_link_level_equals_mu(self):
        data = uniform_data(800, seed=7)
        a = confidence_band(data, LS, 1, CFG, target="level", s=1, J=6)
        b = confidence_band(data, LS, 1, CFG, target="mu", v=0, s=1, J=6)
        np.testing.assert_array_equal(a.lower, b.lower)
        np.testing.assert_array_equal(a.upper, b.upper)

    def test_rbc_center_is_higher_degree(self):
        data = uniform_data(800, seed=8)
        band = confidence_band(data, LS, 0, CFG, J=6)
        assert band.center_fit.basis.degree == 1 and band.center_fit.basis.smoothness == 0
        assert band.point_fit.basis.degree == 0
        no_rbc = confidence_band(data, LS, 0, InferenceConfig(nsims=2000, seed=11, rbc=False), J=6)
        np.testing.assert_array_equal(no_rbc.center, no_rbc.estimate)

    def test_marginal_from_piecewise_constant(self):
        data = uniform_data(800, seed=9)
        band = confidence_band(data, LS, 0, CFG, target="marginal", J=5)
        assert np.all(np.isnan(band.estimate)) and np.all(np.isfinite(band.center))
        with pytest.raises(InvalidDerivative):
            confidence_band(data, LS, 0, InferenceConfig(nsims=2000, rbc=False), target="marginal", J=5)

    def test_selects_J_when_missing(self):
        data = uniform_data(2000, seed=10)
        prep = prepare(data, LS, 0)
        assert prep.selection is not None and prep.J == prep.selection.J

    def test_affine_invariance_of_decision(self):
        data = uniform_data(1000, seed=12)
        moved = Dataset.from_arrays(3 * data.y + 1, data.x)
        a = confidence_band(data, LS, 1, CFG, s=1, J=6)
        b = confidence_band(moved, LS, 1, CFG, s=1, J=6)
        assert b.critical_value == pytest.approx(a.critical_value, rel=1e-12)
        np.testing.assert_allclose(b.lower, 3 * a.lower + 1, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(b.upper, 3 * a.upper + 1, rtol=1e-9, atol=1e-9)


class TestPointwise:
    def test_normal_half_width(self):
        data = uniform_data(600, seed=13)
        f = fit(data, BasisSpec(1, 1, quantile_knots(data.x, 4)), LS)
        ci = pointwise_ci(f, covariance(f), [0.2, 0.7])
        np.testing.assert_allclose(ci.upper - ci.estimate, 1.959964 * ci.se, rtol=1e-6)

    def test_single_bin_mean_interval(self):
        data = uniform_data(400, seed=14)
        f = fit(data, BasisSpec(0, 0, quantile_knots(data.x, 1)), LS)
        ci = pointwise_ci(f, covariance(f), 0.5)
        se = np.std(data.y) / np.sqrt(data.n)
        np.testing.assert_allclose(ci.estimate, data.y.mean(), rtol=1e-12)
        np.testing.assert_allclose(ci.se, se, rtol=1e-10)

    def test_noiseless_degenerate(self):
        x = np.linspace(0, 1, 100)
        data = Dataset.from_arrays(np.full(100, 2.0), x)
        f = fit(data, BasisSpec(0, 0, quantile_knots(x, 3)), LS)
        ci = pointwise_ci(f, covariance(f), [0.1, 0.9])
        np.testing.assert_allclose(ci.lower, ci.upper, atol=1e-12)
        np.testing.assert_allclose(ci.estimate, 2.0, atol=1e-12)


class TestSpecification:
    def test_own_fitted_values_null(self):
        data = uniform_data(800, seed=15)
        prep = prepare(data, LS, 1, s=1, J=5)
        grid = eval_grid(prep.partition)
        res = spec_test(data, LS, 1, null=predict_level(prep.center_fit, grid), cfg=CFG, prepared=prep)
        assert res.statistic == 0.0 and res.p_value == 1.0 and not res.reject

    def test_duality_with_band(self):
        data = uniform_data(1500, lambda x: 0.3 * x, seed=16)
        band = confidence_band(data, LS, 0, CFG, J=4)
        inside = 0.5 * (band.lower.max() + band.upper.min())
        for const in (inside, band.upper.max() + 0.1, band.lower.min() - 0.1, band.lower.max()):
            res = spec_test(data, LS, 0, null=const, cfg=CFG, J=4)
            exits = np.any((const < band.lower) | (const > band.upper))
            assert res.critical_value == band.critical_value
            assert res.reject == exits

    def test_linear_null_on_linear_truth(self):
        data = uniform_data(2000, lambda x: 1 + x, seed=17)
        assert not spec_test(data, LS, 1, null=("poly", 1), cfg=CFG, s=1).reject

    def test_detects_cubic(self):
        data = uniform_data(5000, lambda x: 8 * (x - 0.5) ** 3 + 2 * (x - 0.5) ** 2, 0.3, seed=18)
        res = spec_test(data, LS, 0, null=("poly", 1), cfg=CFG)
        assert res.reject and res.p_value < 0.01

    def test_null_shape_mismatch(self):
        data = uniform_data(500, seed=19)
        with pytest.raises(ValidationError):
            spec_test(data, LS, 0, null=np.ones(3), cfg=CFG, J=3)


class TestShape:
    def test_decreasing_truth_not_rejected(self):
        data = uniform_data(3000, lambda x: -2 * x, seed=20)
        res = shape_test(data, LS, 1, "nonpositive-derivative", cfg=CFG, s=1)
        assert not res.reject and res.sided == "one"

    def test_increasing_truth_rejected(self):
        data = uniform_data(3000, lambda x: 2 * x, seed=21)
        assert shape_test(data, LS, 1, "nonpositive-derivative", cfg=CFG, s=1).reject
        assert not shape_test(data, LS, 1, "nonnegative-derivative", cfg=CFG, s=1).reject

    def test_loose_upper_bound(self):
        data = uniform_data(1000, seed=22)
        res = shape_test(data, LS, 0, "level-upper", bound=lambda x: np.sin(x) + 100, cfg=CFG, J=5)
        assert res.statistic < -100 and not res.reject

    def test_bad_shape(self):
        with pytest.raises(ValidationError):
            shape_test(uniform_data(100, seed=23), LS, 0, "convex", cfg=CFG)
        with pytest.raises(ValidationError):
            shape_test(uniform_data(100, seed=23), LS, 0, "level-upper", cfg=CFG)


class TestGroups:
    def grouped(self, shift=0.0, n=1000, seed=24):
        a, b = uniform_data(n, seed=seed), uniform_data(n, seed=seed + 1)
        y = np.concatenate((a.y, b.y + shift))
        x = np.concatenate((a.x, b.x))
        return Dataset.from_arrays(y, x, group=np.repeat(["a", "b"], n))

    def test_identical_groups(self):
        a = uniform_data(600, seed=25)
        data = Dataset.from_arrays(np.tile(a.y, 2), np.tile(a.x, 2), group=np.repeat(["u", "v"], 600))
        test, band = compare_groups(data, LS, 0, cfg=CFG)
        assert test.statistic == 0.0 and test.p_value == 1.0
        np.testing.assert_array_equal(band.center, 0.0)
        np.testing.assert_array_equal(band.estimate, 0.0)

    def test_shift_detected(self):
        test, band = compare_groups(self.grouped(1.0), LS, 0, cfg=CFG)
        assert test.reject
        assert abs(np.mean(band.center) - 1.0) < 0.15

    def test_grid_inside_common_support(self):
        data = self.grouped()
        test, band = compare_groups(data, LS, 1, cfg=CFG, s=1, grid=np.linspace(-1, 2, 31))
        assert band.grid.min() >= 0 and band.grid.max() <= 1

    def test_disjoint_supports(self):
        x = np.concatenate((np.linspace(0, 1, 50), np.linspace(2, 3, 50)))
        data = Dataset.from_arrays(x, x, group=np.repeat([0, 1], 50))
        with pytest.raises(NoCommonSupport):
            compare_groups(data, LS, 0, cfg=CFG, J=2)

    def test_needs_two_groups(self):
        data = Dataset.from_arrays(np.arange(9.0), np.arange(9.0), group=np.repeat([0, 1, 2], 3))
        from nlbinscatter.errors import EmptyGroup

        with pytest.raises(EmptyGroup):
            compare_groups(data, LS, 0, cfg=CFG, J=1)
