"""Number-of-bins and polynomial-order selection by IMSE minimization.

Both selectors estimate a variance constant ``V`` and a bias constant
``B`` and return

    J = ceil((2 (p - v + 1) B / ((1 + 2v) V))^(1/(2p+3)) * n^(1/(2p+3))),

capped at ``floor(n / (5 (p + 1)))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from math import comb, factorial

import numpy as np
from numpy.polynomial import Polynomial
from scipy.linalg import invhilbert
from scipy.special import bernoulli

from .basis import BasisSpec, design_matrix
from .covariance import covariance
from .data import Dataset
from .errors import DegenerateBiasWarning, InvalidDerivative, UnsupportedOrder, ValidationError
from .estimator import fit, fit_polynomial
from .models import ModelSpec
from .partition import assign_bins, make_partition

MAX_ORDER = 8


@dataclass(frozen=True)
class SelectorResult:
    J: int
    variance_constant: float
    bias_constant: float
    method: str
    preliminary_J: int | None = None
    degenerate: bool = False
    capped: bool = False

    @property
    def V(self) -> float:
        return self.variance_constant

    @property
    def B(self) -> float:
        return self.bias_constant


def _poly_coefficients(kind: str, m: int) -> np.ndarray:
    if m < 0:
        raise UnsupportedOrder(f"order must be >= 0, got {m}")
    if m > MAX_ORDER:
        raise UnsupportedOrder(f"order {m} exceeds the supported maximum {MAX_ORDER}")
    if kind == "rot_B":
        sign = (-1) ** m
        coef = [sign * comb(m, k) * comb(m + k, k) * (-1) ** k / comb(2 * m, m) for k in range(m + 1)]
        return np.array(coef, dtype=float)
    if kind == "bernoulli_E":
        bnum = bernoulli(m)
        coef = np.zeros(m + 1)
        for k in range(m + 1):
            coef[m - k] = comb(m, k) * bnum[k]
        return coef
    raise ValidationError(f"unknown polynomial kind {kind!r}")


def bernoulli_like_poly(kind: str, m: int, z):
    """Evaluate ``rot_B`` (shifted-Legendre closed form) or the Bernoulli polynomial of order m."""
    return Polynomial(_poly_coefficients(kind, m))(np.asarray(z, dtype=float))


def rot_bias_integral(m: int) -> float:
    """``int_0^1 rot_B(m, z)^2 dz`` by exact polynomial integration."""
    sq = Polynomial(_poly_coefficients("rot_B", m)) ** 2
    anti = sq.integ()
    return float(anti(1.0) - anti(0.0))


def variance_trace(p: int, v: int) -> float:
    """``tr{(int phi phi')^-1 int phi^(v) phi^(v)'}`` for ``phi(z) = (1, z, ..., z^p)`` on [0, 1]."""
    if v > p:
        raise InvalidDerivative(f"derivative {v} exceeds degree {p}")
    gram_inv = invhilbert(p + 1, exact=False)
    dmat = np.zeros((p + 1, p + 1))
    for k in range(v, p + 1):
        for l in range(v, p + 1):
            ck = factorial(k) / factorial(k - v)
            cl = factorial(l) / factorial(l - v)
            dmat[k, l] = ck * cl / (k + l - 2 * v + 1)
    return float(np.trace(gram_inv @ dmat))


def imse_J(V: float, B: float, n: int, p: int, v: int) -> float:
    """Unrounded IMSE-optimal number of bins."""
    rate = 1.0 / (2 * p + 3)
    return (2.0 * (p - v + 1) * B / ((1 + 2 * v) * V)) ** rate * n**rate


def max_bins(n: int, p: int) -> int:
    return max(1, n // (5 * (p + 1)))


def _finish(V, B, n, p, v, method, scale, preliminary=None) -> SelectorResult:
    if not (np.isfinite(V) and np.isfinite(B)) or V < 0 or B < 0:
        raise ValidationError(f"selector constants are not finite and nonnegative (V={V}, B={B})")
    degenerate = B <= 1e-12 * (V + scale) or V <= 0
    if degenerate:
        warnings.warn(
            "estimated bias constant is zero; falling back to J = ceil(n^(1/(2p+3)))",
            DegenerateBiasWarning,
            stacklevel=3,
        )
        raw = n ** (1.0 / (2 * p + 3))
    else:
        raw = imse_J(V, B, n, p, v)
    J = max(1, math.ceil(raw - 1e-12 * raw))
    cap = max_bins(n, p)
    capped = J > cap
    return SelectorResult(
        J=min(J, cap),
        variance_constant=float(V),
        bias_constant=float(B),
        method=method,
        preliminary_J=preliminary,
        degenerate=bool(degenerate),
        capped=bool(capped),
    )


def _plugin(value, x, name):
    """Resolve a scalar, per-observation array, or callable override."""
    if callable(value):
        out = np.asarray(value(x), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    out = np.broadcast_to(out, x.shape).astype(float)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"override {name} has non-finite values")
    return out


def histogram_density(x) -> np.ndarray:
    """Density at each x from a histogram with ``ceil(n^(1/3))`` equal-width bins."""
    x = np.asarray(x, dtype=float)
    n = x.size
    nb = math.ceil(n ** (1.0 / 3.0) - 1e-9)
    part = make_partition(x, nb, "even")
    idx = assign_bins(part, x)
    counts = np.bincount(idx, minlength=nb + 1)[1:]
    dens = counts / (n * part.widths)
    return dens[idx - 1], idx


def rot_select(
    data: Dataset,
    p: int,
    s: int = 0,
    v: int = 0,
    model: ModelSpec | None = None,
    sigma2=None,
    density=None,
    mu_deriv=None,
    variance_moment: float | None = None,
    bias_moment: float | None = None,
) -> SelectorResult:
    """Rule-of-thumb IMSE selector.

    Defaults: histogram density, ``(p+1)``-th derivative of a global
    degree-``(p+2)`` polynomial fit (with controls) and bin-averaged squared
    residuals from that fit. Each plug-in can be overridden by a scalar, an
    array over observations, or a callable of x; ``variance_moment`` and
    ``bias_moment`` replace the sample averages ``mean(sigma2 f^(2v))`` and
    ``mean(mu^(p+1)^2 / f^(2p+2-2v))`` outright.
    """
    if v > p:
        raise InvalidDerivative(f"derivative {v} exceeds degree {p}")
    model = model or ModelSpec("ls")
    x, n = data.x, data.n
    need_fit = (variance_moment is None and sigma2 is None) or (bias_moment is None and mu_deriv is None)
    poly = fit_polynomial(data, p + 2, model) if need_fit else None
    if density is None:
        fhat, hist_idx = histogram_density(x)
    else:
        fhat = _plugin(density, x, "density")
        hist_idx = None
        if np.any(fhat <= 0):
            raise ValidationError("density override must be positive")

    if variance_moment is None:
        if sigma2 is None:
            resid2 = (data.y - model.link(poly.theta_obs)) ** 2
            idx = hist_idx if hist_idx is not None else histogram_density(x)[1]
            sums = np.bincount(idx, weights=resid2)
            cnts = np.bincount(idx)
            with np.errstate(invalid="ignore"):
                s2 = (sums / np.maximum(cnts, 1))[idx]
        else:
            s2 = _plugin(sigma2, x, "sigma2")
        variance_moment = float(np.mean(s2 * fhat ** (2 * v)))
    if bias_moment is None:
        if mu_deriv is None:
            deriv = poly.mu(x, p + 1)
        else:
            deriv = _plugin(mu_deriv, x, "mu_deriv")
        bias_moment = float(np.mean(deriv**2 / fhat ** (2 * p + 2 - 2 * v)))

    m = p + 1 - v
    V = variance_trace(p, v) * variance_moment
    B = rot_bias_integral(m) / factorial(m) ** 2 * bias_moment
    scale = float(np.var(data.y))
    return _finish(V, B, n, p, v, "rot", scale)


def dpi_select(
    data: Dataset,
    model: ModelSpec,
    p: int,
    s: int = 0,
    v: int = 0,
    preliminary: SelectorResult | int | None = None,
    binspos: str = "quantile",
) -> SelectorResult:
    """Direct plug-in IMSE selector built on a preliminary binscatter fit.

    The variance constant is the bin-count-normalized average sandwich
    variance of the v-th derivative. The bias constant uses the
    (p+1)-th derivative from a maximally smooth degree-(p+1) spline fit on
    the preliminary partition, the Bernoulli-polynomial leading term, and
    its projection onto the degree-p basis. The average squared bias is
    linear-in-coefficients, so its sampling noise (from the sandwich
    covariance of the degree-(p+1) fit) is subtracted before use.
    """
    if v > p:
        raise InvalidDerivative(f"derivative {v} exceeds degree {p}")
    if preliminary is None:
        preliminary = rot_select(data, p, s, v, model=model)
    J0 = preliminary.J if isinstance(preliminary, SelectorResult) else int(preliminary)
    part = make_partition(data.x, J0, binspos)
    basis = BasisSpec(p, s, part)
    fit_p = fit(data, basis, model)
    cov = covariance(fit_p)
    x, n = data.x, data.n

    Bv = design_matrix(basis, x, v)
    avg = np.asarray((Bv.T @ Bv).todense()) / n
    QinvSig = cov.q_chol.solve(cov.Sigma)
    sandwich = cov.q_chol.solve(QinvSig.T)
    V = J0 ** (-(1 + 2 * v)) * float(np.sum(sandwich * avg))

    # the bias term is linear in the high-order coefficients: resid = M beta_hi
    high = BasisSpec(p + 1, p + 1, part)
    fit_hi = fit(data, high, model)
    D = design_matrix(high, x, p + 1).toarray()
    bins = assign_bins(part, x) - 1
    h = part.widths[bins]
    z = (x - part.knots[bins]) / h
    m = p + 1

    def lead(order):
        k = m - order
        return h**k / factorial(k) * bernoulli_like_poly("bernoulli_E", k, z)

    M0 = lead(0)[:, None] * D
    Mv = M0 if v == 0 else lead(v)[:, None] * D
    B0 = design_matrix(basis, x, 0)
    proj = cov.q_chol.solve(B0.T @ (cov.curvature[:, None] * M0) / n)
    M = Mv - Bv @ proj
    resid = M @ fit_hi.beta
    # remove the sampling noise of beta_hi from the average squared bias
    cov_hi = covariance(fit_hi)
    Vhi = cov_hi.q_chol.solve(cov_hi.q_chol.solve(cov_hi.Sigma).T) / n
    noise = float(np.einsum("ij,jk,ik->", M, Vhi, M)) / n
    raw = float(np.mean(resid**2))
    B = J0 ** (2 * m - 2 * v) * max(raw - noise, 0.0)
    scale = float(np.var(data.y))
    return _finish(V, B, n, p, v, "dpi", scale, preliminary=J0)


def select(data, model, p, s=0, v=0, method="rot", binspos="quantile") -> SelectorResult:
    if method == "rot":
        return rot_select(data, p, s, v, model=model)
    if method == "dpi":
        return dpi_select(data, model, p, s, v, binspos=binspos)
    raise ValidationError(f"unknown selector {method!r}")


def choose_p(j_by_p: dict, J_target: int) -> int:
    """Order whose IMSE-optimal J is nearest ``J_target``; ties go to the smaller order."""
    if not j_by_p:
        raise ValidationError("empty order grid")
    return min(sorted(j_by_p), key=lambda q: abs(j_by_p[q] - J_target))


def p_select(data, model, J_target: int, v: int = 0, p_grid=range(0, 4), method="rot",
             smooth: bool = False) -> int:
    """Order in ``p_grid`` whose selected J is nearest ``J_target``."""
    grid = sorted(set(int(q) for q in p_grid))
    if not grid:
        raise ValidationError("empty order grid")
    if grid[0] < v:
        raise InvalidDerivative(f"orders in the grid must be >= v={v}")
    j_by_p = {q: select(data, model, q, q if smooth else 0, v, method).J for q in grid}
    return choose_p(j_by_p, J_target)
