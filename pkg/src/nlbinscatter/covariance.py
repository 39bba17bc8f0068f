"""Sandwich covariance pieces for binscatter fits.

``Q = n^-1 sum b b' * Upsilon * eta'(theta)^2`` is the curvature-weighted
Gram matrix, ``Sigma = n^-1 sum b b' * psi^2 * eta'(theta)^2`` the score
outer product, and the pointwise variance of a linear target ``a(x)'beta``
is ``Omega(x) = a' Q^-1 Sigma Q^-1 a``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .basis import design_matrix
from .errors import CurvatureFloorWarning, InvalidDerivative, SingularCurvature, ValidationError
from .estimator import FitResult, fit as fit_model
from .linalg import BandedCholesky, to_banded
from .models import ModelSpec

CURVATURE_FLOOR = 1e-8
TARGETS = ("level", "mu", "marginal")


def quantile_step(tau: float) -> float:
    """Difference-quotient step for the sparsity estimate."""
    return min(0.1, tau, 1.0 - tau) / 2.0


def upsilon_hat(fit: FitResult, floor: bool = True) -> np.ndarray:
    """Per-observation curvature weight ``Upsilon_i * eta'(theta_i)^2``.

    LS gives 1, logit ``eta (1 - eta)``, Huber ``2 * 1{|r| <= tau}`` and the
    quantile family the conditional density at the fitted quantile,
    estimated as ``2h / (theta_{tau+h} - theta_{tau-h})`` from two refits.
    With ``floor`` the weights are clamped below at ``1e-8`` times the median
    positive weight;
    otherwise nonpositive weights raise ``SingularCurvature``.
    """
    model, theta = fit.model, fit.theta_obs
    fam = model.family
    if fam == "ls":
        weights = np.ones_like(theta)
    elif fam == "logit":
        weights = model.link_d1(theta)
    elif fam == "huber":
        weights = 2.0 * (np.abs(fit.data.y - theta) <= model.tau)
    else:
        h = quantile_step(model.tau)
        up = fit_model(fit.data, fit.basis, ModelSpec("quantile", model.tau + h), fit.eval_point)
        dn = fit_model(fit.data, fit.basis, ModelSpec("quantile", model.tau - h), fit.eval_point)
        spread = up.theta_obs - dn.theta_obs
        with np.errstate(divide="ignore", invalid="ignore"):
            weights = np.where(spread > 0, 2.0 * h / spread, 0.0)
    weights = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(weights)):
        raise SingularCurvature("curvature weights are not finite")
    if not floor:
        if np.any(weights <= 0):
            raise SingularCurvature(f"{int(np.sum(weights <= 0))} curvature weight(s) are not positive")
        return weights
    # Huber weights are exactly zero off the quadratic zone, so the reference
    # scale is the median of the positive weights
    positive = weights[weights > 0]
    if positive.size == 0:
        raise SingularCurvature("no positive curvature weight; cannot floor")
    med = float(np.median(positive))
    low = CURVATURE_FLOOR * med
    nlow = int(np.sum(weights < low))
    if nlow:
        warnings.warn(
            f"{nlow} curvature weight(s) clamped to {low:.3g} (1e-8 of the median)",
            CurvatureFloorWarning,
            stacklevel=2,
        )
        weights = np.maximum(weights, low)
    return weights


def score_weights(fit: FitResult) -> np.ndarray:
    """``psi(y_i, eta(theta_i)) * eta'(theta_i)`` for each observation."""
    model, y, theta = fit.model, fit.data.y, fit.theta_obs
    if model.family == "quantile":
        return (y < theta).astype(float) - model.tau
    g, _ = model.theta_derivs(y, theta)
    return g


def _weighted_gram(B: sp.csr_matrix, weights: np.ndarray) -> np.ndarray:
    n = B.shape[0]
    return np.asarray((B.T @ B.multiply(weights[:, None])).todense()) / n


def gram(fit: FitResult, weights=None) -> np.ndarray:
    """Curvature-weighted Gram matrix ``Q`` (dense, banded pattern)."""
    if weights is None:
        weights = upsilon_hat(fit)
    return _weighted_gram(design_matrix(fit.basis, fit.data.x), weights)


def meat(fit: FitResult) -> np.ndarray:
    """Score outer product ``Sigma`` (dense, banded pattern)."""
    return _weighted_gram(design_matrix(fit.basis, fit.data.x), score_weights(fit) ** 2)


def sqrt_psd(sigma: np.ndarray, bandwidth: int) -> np.ndarray:
    """Factor ``L`` with ``L L' = sigma`` for a symmetric PSD banded matrix.

    Tries a banded Cholesky, then one with a ``1e-12 * tr / K`` ridge, then
    an eigendecomposition with negative eigenvalues clipped.
    """
    K = sigma.shape[0]
    tr = float(np.trace(sigma))
    if not tr > 0:
        return np.zeros_like(sigma)
    for ridge in (0.0, 1e-12 * tr / K):
        ab = to_banded(sigma + ridge * np.eye(K), bandwidth)
        try:
            cb = sla.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError:
            continue
        upper = np.zeros((K, K))
        for d in range(bandwidth + 1):
            upper += np.diag(cb[bandwidth - d, d:], k=d)
        return upper.T
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class CovarianceSet:
    """Gram, meat and meat-factor matrices of a fit, with variance evaluators."""

    Q: np.ndarray
    Sigma: np.ndarray
    Sigma_half: np.ndarray
    fit: FitResult
    q_chol: BandedCholesky
    curvature: np.ndarray
    condition: float

    @property
    def n(self) -> int:
        return self.fit.n

    def rows(self, x, target: str = "level", v: int = 0) -> np.ndarray:
        """Target-specific rows ``a(x)``: ``b^(v)``, ``eta' b`` or ``eta' b^(1)``."""
        fit = self.fit
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if target not in TARGETS:
            raise ValidationError(f"unknown target {target!r}")
        if target == "mu":
            return design_matrix(fit.basis, x, v).toarray()
        deriv = 1 if target == "marginal" else 0
        if deriv > fit.basis.degree:
            raise InvalidDerivative("the marginal effect needs degree p >= 1")
        B0 = design_matrix(fit.basis, x, 0)
        theta = B0 @ fit.beta + fit.index_shift
        scale = fit.model.link_d1(theta)
        Bd = B0 if deriv == 0 else design_matrix(fit.basis, x, 1)
        return Bd.toarray() * scale[:, None]

    def loadings(self, x, target: str = "level", v: int = 0):
        """``(L, omega)`` with ``L = a' Q^-1 Sigma^{1/2}`` and ``omega = rowsum(L^2)``."""
        A = self.rows(x, target, v)
        U = self.q_chol.solve(A.T)
        L = U.T @ self.Sigma_half
        omega = np.einsum("ij,ij->j", U, self.Sigma @ U)
        return L, np.maximum(omega, 0.0)

    def omega(self, x, target: str = "level", v: int = 0):
        _, om = self.loadings(x, target, v)
        return om if np.ndim(x) else float(om[0])

    def se(self, x, target: str = "level", v: int = 0):
        return np.sqrt(self.omega(x, target, v) / self.n)

    def curvature_histogram(self, bins: int = 20):
        """``(counts, edges)`` of the curvature weights, a diagnostic for the plug-in."""
        return np.histogram(self.curvature, bins=bins)


def covariance(fit: FitResult) -> CovarianceSet:
    """Build the covariance set of a converged fit."""
    B = design_matrix(fit.basis, fit.data.x)
    weights = upsilon_hat(fit)
    Q = _weighted_gram(B, weights)
    Sigma = _weighted_gram(B, score_weights(fit) ** 2)
    u = fit.basis.bandwidth
    chol = BandedCholesky(to_banded(Q, u), what="Gram matrix")
    diag = chol.cb[-1]
    condition = float((diag.max() / diag.min()) ** 2)
    return CovarianceSet(
        Q=Q,
        Sigma=Sigma,
        Sigma_half=sqrt_psd(Sigma, u),
        fit=fit,
        q_chol=chol,
        curvature=weights,
        condition=condition,
    )


def omega(cov: CovarianceSet, x, target: str = "level", v: int = 0):
    return cov.omega(x, target, v)
