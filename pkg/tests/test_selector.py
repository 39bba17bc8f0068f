import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlbinscatter.errors import DegenerateBiasWarning, InvalidDerivative, UnsupportedOrder, ValidationError
from nlbinscatter.models import ModelSpec
from nlbinscatter.selector import (
    bernoulli_like_poly,
    choose_p,
    dpi_select,
    imse_J,
    max_bins,
    p_select,
    rot_bias_integral,
    rot_select,
    variance_trace,
)

from conftest import uniform_data

EXACT = dict(sigma2=1.0, density=1.0, mu_deriv=lambda x: 2 * x)


def square_data(n, seed, noise=1.0):
    return uniform_data(n, lambda x: x**2, noise, seed=seed)


class TestPolynomials:
    def test_rot_b_first_order(self):
        assert bernoulli_like_poly("rot_B", 1, 0.5) == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(bernoulli_like_poly("rot_B", 1, [0, 1]), [-0.5, 0.5])
        assert rot_bias_integral(1) == pytest.approx(1 / 12, rel=1e-14)

    def test_bernoulli_values(self):
        z = np.linspace(0, 1, 7)
        assert bernoulli_like_poly("bernoulli_E", 2, 0.0) == pytest.approx(1 / 6)
        np.testing.assert_allclose(bernoulli_like_poly("bernoulli_E", 1, z), z - 0.5, atol=1e-15)
        np.testing.assert_allclose(bernoulli_like_poly("bernoulli_E", 3, z), z**3 - 1.5 * z**2 + 0.5 * z, atol=1e-14)

    @pytest.mark.parametrize("m", range(1, 9))
    def test_rot_b_orthogonal_to_lower_degrees(self, m):
        # rot_B(m) is the monic shifted Legendre polynomial: orthogonal to z^k, k < m, on [0, 1]
        z, wts = np.polynomial.legendre.leggauss(20)
        z, wts = (z + 1) / 2, wts / 2
        vals = bernoulli_like_poly("rot_B", m, z)
        for k in range(m):
            assert abs(np.sum(wts * vals * z**k)) < 1e-12
        assert rot_bias_integral(m) == pytest.approx(np.sum(wts * vals**2), rel=1e-10)

    def test_order_limit(self):
        with pytest.raises(UnsupportedOrder):
            bernoulli_like_poly("rot_B", 9, 0.1)
        with pytest.raises(ValidationError):
            bernoulli_like_poly("other", 1, 0.1)


class TestConstants:
    def test_variance_trace_values(self):
        assert variance_trace(0, 0) == pytest.approx(1.0)
        for p in range(5):
            assert variance_trace(p, 0) == pytest.approx(p + 1, rel=1e-8)
        assert variance_trace(1, 1) == pytest.approx(12.0, rel=1e-10)
        with pytest.raises(InvalidDerivative):
            variance_trace(1, 2)

    def test_imse_formula(self):
        assert imse_J(1.0, 1 / 9, 1000, 0, 0) == pytest.approx((2 / 9) ** (1 / 3) * 10)

    def test_max_bins(self):
        assert max_bins(1000, 0) == 200
        assert max_bins(1000, 3) == 50
        assert max_bins(3, 2) == 1


class TestRuleOfThumb:
    def test_exact_plugins(self):
        data = uniform_data(1000, seed=0)
        res = rot_select(data, 0, **EXACT)
        assert res.V == pytest.approx(1.0, rel=1e-14)
        assert res.B == pytest.approx(np.mean((2 * data.x) ** 2) / 12, rel=1e-12)
        assert res.B == pytest.approx(1 / 9, rel=0.05)

    def test_population_moment_gives_seven(self):
        data = uniform_data(1000, seed=1)
        res = rot_select(data, 0, sigma2=1.0, density=1.0, bias_moment=4 / 3)
        assert res.B == pytest.approx(1 / 9, rel=1e-14)
        assert res.J == 7 == math.ceil((2 / 9) ** (1 / 3) * 10)

    def test_overrides_accept_arrays_and_callables(self):
        data = uniform_data(500, seed=2)
        a = rot_select(data, 0, sigma2=np.ones(500), density=lambda x: np.ones_like(x), mu_deriv=2 * data.x)
        b = rot_select(data, 0, **EXACT)
        assert (a.J, a.V, a.B) == (b.J, b.V, b.B)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.05, 20.0), st.integers(0, 2))
    def test_homogeneity_in_noise_variance(self, c, p):
        data = uniform_data(2000, seed=3)
        base = rot_select(data, p, sigma2=1.0, density=1.0, mu_deriv=lambda x: 1 + x)
        scaled = rot_select(data, p, sigma2=c, density=1.0, mu_deriv=lambda x: 1 + x)
        assert scaled.V == pytest.approx(c * base.V, rel=1e-12)
        ratio = imse_J(scaled.V, scaled.B, 2000, p, 0) / imse_J(base.V, base.B, 2000, p, 0)
        assert ratio == pytest.approx(c ** (-1 / (2 * p + 3)), rel=1e-12)

    def test_constant_truth_falls_back(self):
        data = uniform_data(1000, seed=4)
        with pytest.warns(DegenerateBiasWarning):
            res = rot_select(data, 0, sigma2=1.0, density=1.0, mu_deriv=0.0)
        assert res.degenerate
        assert res.J == math.ceil(1000 ** (1 / 3))

    def test_linear_truth_positive_bias(self):
        res = rot_select(uniform_data(1000, lambda x: 3 * x, seed=5), 0)
        assert res.B > 0 and not res.degenerate

    def test_default_plugins_close_to_exact(self):
        res = [rot_select(square_data(20_000, seed=seed), 0) for seed in range(5)]
        assert np.mean([r.V for r in res]) == pytest.approx(1.0, rel=0.05)
        assert np.mean([r.B for r in res]) == pytest.approx(1 / 9, rel=0.1)

    def test_cap(self):
        res = rot_select(uniform_data(50, seed=7), 0, sigma2=1e-6, density=1.0, mu_deriv=10.0)
        assert res.capped and res.J == max_bins(50, 0)

    @pytest.mark.parametrize("p", [0, 1])
    def test_rate_law(self, p):
        ns = np.array([1000, 4000, 16000])
        Js = [rot_select(uniform_data(n, lambda x: np.exp(2 * x), 0.2, seed=8), p).J for n in ns]
        slope = np.polyfit(np.log(ns), np.log(Js), 1)[0]
        assert abs(slope - 1 / (2 * p + 3)) <= 0.1

    def test_derivative_order_check(self):
        with pytest.raises(InvalidDerivative):
            rot_select(uniform_data(100, seed=9), 0, v=1)


class TestDirectPlugIn:
    def test_agrees_with_rule_of_thumb_on_average(self):
        # per-seed DPI noise is about +-2 bins here, so the comparison uses seed averages
        rot_J, dpi_J = [], []
        for seed in range(20):
            data = square_data(5000, seed)
            r = rot_select(data, 0)
            rot_J.append(r.J)
            dpi_J.append(dpi_select(data, ModelSpec("ls"), 0, preliminary=r).J)
        rot_J, dpi_J = np.array(rot_J), np.array(dpi_J)
        population = math.ceil((2 / 9) ** (1 / 3) * 5000 ** (1 / 3))
        assert abs(dpi_J.mean() - rot_J.mean()) <= 2
        assert abs(dpi_J.mean() - population) <= 2
        assert np.median(np.abs(dpi_J - rot_J)) <= 2

    def test_variance_constant_positive(self):
        for model in (ModelSpec("ls"), ModelSpec("huber", 1.0), ModelSpec("quantile", 0.5)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = dpi_select(square_data(2000, 10), model, 1, 1, preliminary=6)
            assert np.isfinite(res.V) and res.V > 0

    def test_variance_constant_near_population(self):
        res = dpi_select(square_data(20_000, 11), ModelSpec("ls"), 0, preliminary=20)
        assert res.V == pytest.approx(1.0, rel=0.1)

    def test_polynomial_truth_degenerate(self):
        data = uniform_data(2000, lambda x: 1 + 2 * x, 0.0, seed=12)
        with pytest.warns(DegenerateBiasWarning):
            res = dpi_select(data, ModelSpec("ls"), 1, 1, preliminary=5)
        assert res.degenerate and res.J == math.ceil(2000 ** (1 / 5))

    def test_records_preliminary(self):
        res = dpi_select(square_data(1000, 13), ModelSpec("ls"), 0, preliminary=8)
        assert res.preliminary_J == 8 and res.method == "dpi"


class TestOrderSelection:
    def test_nearest(self):
        assert choose_p({0: 40, 1: 12}, 10) == 1

    def test_exact_match(self):
        assert choose_p({0: 40, 1: 12, 2: 7}, 7) == 2

    def test_tie_prefers_smaller(self):
        assert choose_p({0: 12, 1: 8}, 10) == 0

    def test_empty_grid(self):
        with pytest.raises(ValidationError):
            choose_p({}, 3)
        with pytest.raises(ValidationError):
            p_select(uniform_data(100, seed=14), ModelSpec("ls"), 5, p_grid=[])

    def test_grid_below_derivative(self):
        with pytest.raises(InvalidDerivative):
            p_select(uniform_data(100, seed=15), ModelSpec("ls"), 5, v=1, p_grid=[0, 1])

    def test_p_select_consistent_with_rot(self):
        data = uniform_data(3000, lambda x: np.sin(4 * x), 0.5, seed=16)
        js = {q: rot_select(data, q).J for q in range(3)}
        for target in (1, 5, 30):
            assert p_select(data, ModelSpec("ls"), target, p_grid=range(3)) == choose_p(js, target)
