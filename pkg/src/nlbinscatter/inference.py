"""Uniform inference by simulating the sup of a studentized Gaussian process.

For a target row ``a(x)`` the feasible process is
``Z(x) = a(x)' Q^-1 Sigma^{1/2} N / sqrt(Omega(x))`` with ``N`` standard
normal. Bands and tests are centered on the degree ``p + 1`` refit over the
degree-``p`` partition (robust bias correction) unless ``rbc`` is off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .basis import BasisSpec
from .covariance import CovarianceSet, covariance
from .data import Dataset
from .errors import (
    EmptyGroup,
    InvalidDerivative,
    NoCommonSupport,
    NoConvergence,
    NullFitFailure,
    SingularSystem,
    ValidationError,
)
from .estimator import EvalPoint, FitResult, fit, fit_polynomial, make_eval_point, predict
from .models import ModelSpec
from .partition import Partition, make_partition
from .rng import CHUNK, map_draws, normal_draws
from .selector import SelectorResult, select

SHAPES = ("nonpositive-derivative", "nonnegative-derivative", "level-upper")


@dataclass(frozen=True)
class InferenceConfig:
    alpha: float = 0.05
    nsims: int = 50000
    seed: int = 0
    rbc: bool = True
    per_bin: int = 20
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.nsims) < 1000:
            raise ValidationError(f"nsims must be at least 1000, got {self.nsims}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if int(self.per_bin) < 1:
            raise ValidationError("per_bin must be positive")


@dataclass(frozen=True, eq=False)
class BandResult:
    grid: np.ndarray
    estimate: np.ndarray
    center: np.ndarray
    se: np.ndarray
    critical_value: float
    lower: np.ndarray
    upper: np.ndarray
    target: str
    v: int = 0
    J: int = 0
    p: int = 0
    point_fit: FitResult | None = field(default=None, repr=False)
    center_fit: FitResult | None = field(default=None, repr=False)


@dataclass(frozen=True)
class TestResult:
    kind: str
    statistic: float
    p_value: float
    critical_value: float
    sided: str
    J: int
    p_point: int
    p_infer: int
    nsims: int

    @property
    def reject(self) -> bool:
        return self.statistic > self.critical_value


@dataclass(frozen=True)
class Interval:
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def eval_grid(partition: Partition, per_bin: int = 20) -> np.ndarray:
    """``per_bin`` equally spaced interior points in each bin, plus all knots."""
    knots = partition.knots
    pts = [knots]
    for a, b in zip(knots[:-1], knots[1:]):
        pts.append(np.linspace(a, b, per_bin + 2)[1:-1])
    return np.unique(np.concatenate(pts))


def target_values(fit_res: FitResult, x, target: str = "level", v: int = 0) -> np.ndarray:
    return np.asarray(predict(fit_res, np.atleast_1d(x), target, v), dtype=float)


def _studentized(cov: CovarianceSet, grid, target, v):
    L, omega = cov.loadings(grid, target, v)
    top = omega.max() if omega.size else 0.0
    ok = omega > 1e-14 * top if top > 0 else np.zeros(omega.shape, dtype=bool)
    scale = np.zeros_like(omega)
    scale[ok] = 1.0 / np.sqrt(omega[ok])
    return L * scale[:, None], omega


def simulate_sup(cov: CovarianceSet, grid, target: str = "level", v: int = 0, sided: str = "two",
                 nsims: int = 50000, seed: int = 0, sign: float = 1.0, n_jobs: int = 1) -> np.ndarray:
    """``nsims`` draws of ``sup_x |Z(x)|`` (two-sided) or ``sup_x sign * Z(x)`` (one-sided)."""
    if sided not in ("two", "one"):
        raise ValidationError(f"sided must be 'two' or 'one', got {sided!r}")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValidationError("empty evaluation grid")
    Lz, _ = _studentized(cov, grid, target, v)
    LzT = np.ascontiguousarray(Lz.T)

    def sup(N):
        Z = N @ LzT
        return np.abs(Z).max(axis=1) if sided == "two" else (sign * Z).max(axis=1)

    return map_draws(sup, seed, int(nsims), LzT.shape[0], n_jobs=n_jobs)


def critical_value(sups, alpha: float) -> float:
    return float(np.quantile(sups, 1.0 - alpha, method="inverted_cdf"))


def sim_p_value(sups, statistic: float) -> float:
    return float((1 + np.sum(sups >= statistic)) / (sups.size + 1))


def _studentize(diff, se):
    """``diff / se`` with zero-variance points mapped to 0 (no difference) or +-inf."""
    diff = np.asarray(diff, dtype=float)
    out = np.zeros_like(diff)
    pos = se > 0
    out[pos] = diff[pos] / se[pos]
    out[~pos & (diff > 0)] = np.inf
    out[~pos & (diff < 0)] = -np.inf
    return out


@dataclass(frozen=True, eq=False)
class _Prepared:
    partition: Partition
    J: int
    point_basis: BasisSpec
    center_fit: FitResult
    cov: CovarianceSet
    eval_point: EvalPoint
    selection: SelectorResult | None


def prepare(data: Dataset, model: ModelSpec, p: int, s: int = 0, v: int = 0, rbc: bool = True,
            J: int | None = None, partition: Partition | None = None, binspos: str = "quantile",
            selector: str = "rot", eval_point: EvalPoint | None = None) -> _Prepared:
    """Partition (fixed, given, or IMSE-selected at degree p), the center fit and its covariance."""
    selection = None
    if partition is None:
        if J is None:
            selection = select(data, model, p, s, v, selector, binspos)
            J = selection.J
        partition = make_partition(data.x, J, binspos)
    if eval_point is None:
        eval_point = make_eval_point(data)
    basis = BasisSpec(p, s, partition)
    infer_basis = basis.raised() if rbc else basis
    center_fit = fit(data, infer_basis, model, eval_point)
    return _Prepared(partition, partition.nbins, basis, center_fit, covariance(center_fit),
                     eval_point, selection)


def _point_estimate(data, model, prep: _Prepared, grid, target, v):
    basis = prep.point_basis
    need = 1 if target == "marginal" else (v if target == "mu" else 0)
    if need > basis.degree:
        return np.full(grid.size, np.nan), None
    if basis == prep.center_fit.basis:
        point = prep.center_fit
    else:
        point = fit(data, basis, model, prep.eval_point)
    return target_values(point, grid, target, v), point


def _check_target(target, v, p_infer):
    if target not in ("level", "mu", "marginal"):
        raise ValidationError(f"unknown target {target!r}")
    if target == "marginal" and p_infer < 1:
        raise InvalidDerivative("the marginal effect needs degree >= 1")
    if target == "mu" and v > p_infer:
        raise InvalidDerivative(f"derivative {v} exceeds degree {p_infer}")


def confidence_band(data: Dataset, model: ModelSpec, p: int, cfg: InferenceConfig | None = None,
                    target: str = "level", v: int = 0, s: int = 0, J: int | None = None,
                    partition: Partition | None = None, binspos: str = "quantile",
                    selector: str = "rot", eval_point: EvalPoint | None = None,
                    grid=None, prepared: _Prepared | None = None) -> BandResult:
    """Sup-t confidence band for the level, ``mu^(v)`` or the marginal effect."""
    cfg = cfg or InferenceConfig()
    prep = prepared or prepare(data, model, p, s, v, cfg.rbc, J, partition, binspos, selector,
                               eval_point)
    _check_target(target, v, prep.center_fit.basis.degree)
    grid = eval_grid(prep.partition, cfg.per_bin) if grid is None else np.asarray(grid, float)
    estimate, point = _point_estimate(data, model, prep, grid, target, v)
    center = target_values(prep.center_fit, grid, target, v)
    omega = prep.cov.omega(grid, target, v)
    se = np.sqrt(omega / data.n)
    sups = simulate_sup(prep.cov, grid, target, v, "two", cfg.nsims, cfg.seed, n_jobs=cfg.n_jobs)
    cval = critical_value(sups, cfg.alpha)
    return BandResult(
        grid=grid, estimate=estimate, center=center, se=se, critical_value=cval,
        lower=center - cval * se, upper=center + cval * se, target=target, v=v,
        J=prep.J, p=p, point_fit=point, center_fit=prep.center_fit,
    )


def _null_values(null, prep, grid, target, v, model, data):
    if callable(null):
        return np.broadcast_to(np.asarray(null(grid), dtype=float), grid.shape)
    if isinstance(null, tuple) and null[0] == "poly":
        q = int(null[1])
        if q < 0:
            raise ValidationError("null polynomial degree must be >= 0")
        try:
            nfit = fit_polynomial(data, q, model, prep.eval_point)
        except (NoConvergence, SingularSystem) as exc:
            raise NullFitFailure(f"parametric null fit failed: {exc}") from None
        if target == "level":
            return nfit.level(grid)
        if target == "mu":
            return nfit.mu(grid, v)
        return nfit.marginal(grid)
    vals = np.asarray(null, dtype=float)
    if vals.size == 1:
        return np.full(grid.shape, float(vals))
    if vals.shape != grid.shape:
        raise ValidationError(f"null values have shape {vals.shape}, grid has {grid.shape}")
    return vals


def spec_test(data: Dataset, model: ModelSpec, p: int, null=("poly", 1), target: str = "level",
              cfg: InferenceConfig | None = None, v: int = 0, s: int = 0, J: int | None = None,
              partition: Partition | None = None, binspos: str = "quantile",
              selector: str = "rot", eval_point: EvalPoint | None = None, grid=None,
              prepared: _Prepared | None = None) -> TestResult:
    """Two-sided sup test of a parametric null.

    ``null`` is ``("poly", q)`` (global degree-q index fitted with the same
    loss and controls), a callable of x, a constant, or values on the grid.
    """
    cfg = cfg or InferenceConfig()
    prep = prepared or prepare(data, model, p, s, v, cfg.rbc, J, partition, binspos, selector,
                               eval_point)
    _check_target(target, v, prep.center_fit.basis.degree)
    grid = eval_grid(prep.partition, cfg.per_bin) if grid is None else np.asarray(grid, float)
    center = target_values(prep.center_fit, grid, target, v)
    se = np.sqrt(prep.cov.omega(grid, target, v) / data.n)
    m = _null_values(null, prep, grid, target, v, model, data)
    stat = float(np.max(np.abs(_studentize(center - m, se))))
    sups = simulate_sup(prep.cov, grid, target, v, "two", cfg.nsims, cfg.seed, n_jobs=cfg.n_jobs)
    return TestResult(
        kind="spec", statistic=stat, p_value=sim_p_value(sups, stat),
        critical_value=critical_value(sups, cfg.alpha), sided="two", J=prep.J, p_point=p,
        p_infer=prep.center_fit.basis.degree, nsims=cfg.nsims,
    )


def shape_test(data: Dataset, model: ModelSpec, p: int, shape: str = "nonpositive-derivative",
               target: str | None = None, cfg: InferenceConfig | None = None, bound=None,
               v: int = 0, s: int = 0, J: int | None = None, partition: Partition | None = None,
               binspos: str = "quantile", selector: str = "rot",
               eval_point: EvalPoint | None = None, grid=None,
               prepared: _Prepared | None = None) -> TestResult:
    """One-sided sup test of a shape restriction.

    ``nonpositive-derivative`` tests ``zeta <= 0`` (monotone decline),
    ``nonnegative-derivative`` tests ``zeta >= 0``, and ``level-upper``
    tests ``level <= bound(x)``. Derivative nulls default to the marginal
    effect; use ``target="mu", v=1`` for the index derivative.
    """
    if shape not in SHAPES:
        raise ValidationError(f"unknown shape restriction {shape!r}")
    cfg = cfg or InferenceConfig()
    if target is None:
        target = "level" if shape == "level-upper" else "marginal"
    if shape == "level-upper" and bound is None:
        raise ValidationError("level-upper needs a bound")
    prep = prepared or prepare(data, model, p, s, v, cfg.rbc, J, partition, binspos, selector,
                               eval_point)
    _check_target(target, v, prep.center_fit.basis.degree)
    grid = eval_grid(prep.partition, cfg.per_bin) if grid is None else np.asarray(grid, float)
    center = target_values(prep.center_fit, grid, target, v)
    se = np.sqrt(prep.cov.omega(grid, target, v) / data.n)
    if shape == "level-upper":
        diff, sign = center - _null_values(bound, prep, grid, target, v, model, data), 1.0
    elif shape == "nonpositive-derivative":
        diff, sign = center, 1.0
    else:
        diff, sign = -center, -1.0
    stat = float(np.max(_studentize(diff, se)))
    sups = simulate_sup(prep.cov, grid, target, v, "one", cfg.nsims, cfg.seed, sign=sign,
                        n_jobs=cfg.n_jobs)
    return TestResult(
        kind=f"shape:{shape}", statistic=stat, p_value=sim_p_value(sups, stat),
        critical_value=critical_value(sups, cfg.alpha), sided="one", J=prep.J, p_point=p,
        p_infer=prep.center_fit.basis.degree, nsims=cfg.nsims,
    )


def compare_groups(data: Dataset, model: ModelSpec, p: int, target: str = "level",
                   cfg: InferenceConfig | None = None, v: int = 0, s: int = 0,
                   J: int | None = None, binspos: str = "quantile", selector: str = "rot",
                   eval_point: EvalPoint | None = None, grid=None):
    """Difference ``theta_1 - theta_0`` between two groups, with its band and sup test.

    Groups are the two sorted labels (second minus first). Each group gets
    its own fit and partition (``J`` shared when fixed). The default grid is
    the second group's band grid restricted to the first group's support.
    """
    cfg = cfg or InferenceConfig()
    groups = data.split_groups()
    if len(groups) != 2:
        raise EmptyGroup(f"need exactly two groups, found {len(groups)}")
    (label0, d0), (label1, d1) = groups.items()
    if eval_point is None:
        eval_point = make_eval_point(data)
    prep0 = prepare(d0, model, p, s, v, cfg.rbc, J, None, binspos, selector, eval_point)
    prep1 = prepare(d1, model, p, s, v, cfg.rbc, J, None, binspos, selector, eval_point)
    _check_target(target, v, prep0.center_fit.basis.degree)
    lo = max(d0.x.min(), d1.x.min())
    hi = min(d0.x.max(), d1.x.max())
    if grid is None:
        grid = eval_grid(prep1.partition, cfg.per_bin)
        grid = grid[(grid >= d0.x.min()) & (grid <= d0.x.max())]
    else:
        grid = np.asarray(grid, dtype=float)
        grid = grid[(grid >= lo) & (grid <= hi)]
    if grid.size == 0 or not hi >= lo:
        raise NoCommonSupport("the two groups' supports of x do not overlap")

    est = []
    for d_, prep in ((d0, prep0), (d1, prep1)):
        est.append(_point_estimate(d_, model, prep, grid, target, v)[0])
    c0 = target_values(prep0.center_fit, grid, target, v)
    c1 = target_values(prep1.center_fit, grid, target, v)
    L0, om0 = prep0.cov.loadings(grid, target, v)
    L1, om1 = prep1.cov.loadings(grid, target, v)
    var = om1 / d1.n + om0 / d0.n
    se = np.sqrt(var)
    top = var.max()
    ok = var > 1e-14 * top if top > 0 else np.zeros(var.shape, dtype=bool)
    scale = np.zeros_like(var)
    scale[ok] = 1.0 / se[ok]
    A1 = np.ascontiguousarray((L1 * (scale / np.sqrt(d1.n))[:, None]).T)
    A0 = np.ascontiguousarray((L0 * (scale / np.sqrt(d0.n))[:, None]).T)
    sups = np.empty(cfg.nsims)
    for a in range(0, cfg.nsims, CHUNK):
        cnt = min(CHUNK, cfg.nsims - a)
        N1 = normal_draws(cfg.seed, a, cnt, A1.shape[0], stream=1)
        N0 = normal_draws(cfg.seed, a, cnt, A0.shape[0], stream=2)
        sups[a : a + cnt] = np.abs(N1 @ A1 - N0 @ A0).max(axis=1)
    cval = critical_value(sups, cfg.alpha)
    center = c1 - c0
    stat = float(np.max(np.abs(_studentize(center, se))))
    test = TestResult(
        kind="compare", statistic=stat, p_value=sim_p_value(sups, stat), critical_value=cval,
        sided="two", J=prep1.J, p_point=p, p_infer=prep1.center_fit.basis.degree, nsims=cfg.nsims,
    )
    band = BandResult(
        grid=grid, estimate=est[1] - est[0], center=center, se=se, critical_value=cval,
        lower=center - cval * se, upper=center + cval * se, target=target, v=v, J=prep1.J, p=p,
    )
    return test, band


def pointwise_ci(fit_res: FitResult, cov: CovarianceSet, x, target: str = "level",
                 alpha: float = 0.05, v: int = 0) -> Interval:
    """``estimate +- z_{1-alpha/2} * sqrt(Omega(x) / n)``; pass the degree p+1 fit for bias correction."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    est = target_values(fit_res, x, target, v)
    se = np.sqrt(cov.omega(x, target, v) / fit_res.n)
    z = float(ndtri(1.0 - alpha / 2.0))
    return Interval(est, se, est - z * se, est + z * se)
