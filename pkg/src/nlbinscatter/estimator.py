"""Joint semilinear M-estimation on a binscatter basis.

Solves ``min_{beta, gamma} sum_i rho(y_i; eta(b(x_i)'beta + w_i'gamma))`` by
damped Newton steps (exact Hessian for least squares and logit, IRLS
curvature for Huber and the smoothed check loss). Quantile fits use a
Moreau-smoothed check loss whose smoothing level is halved from
``0.1 * IQR(y)`` down to ``1e-6 * IQR(y)``, warm-starting each stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import BasisSpec, design_matrix
from .data import Dataset
from .errors import InvalidDerivative, NoConvergence, SingularSystem, ValidationError
from .linalg import solve_bordered, to_banded
from .models import ModelSpec
from .partition import assign_bins


MAX_ITER = 200
MAX_HALVINGS = 30
KAPPA_START = 0.1
KAPPA_END = 1e-6


@dataclass(frozen=True, eq=False)
class EvalPoint:
    """Evaluation point for the controls, in their original (uncentered) units."""

    values: np.ndarray
    tag: str = "mean"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(vals)):
            raise ValidationError("evaluation point must be finite")
        if self.tag not in ("mean", "median", "user"):
            raise ValidationError(f"unknown evaluation point tag {self.tag!r}")
        object.__setattr__(self, "values", vals)


def make_eval_point(data: Dataset, tag: str = "mean", values=None) -> EvalPoint:
    if tag == "mean":
        return EvalPoint(data.w_means.copy(), "mean")
    if tag == "median":
        return EvalPoint(np.median(data.w_raw, axis=0) if data.d else np.zeros(0), "median")
    if tag == "user":
        vals = np.asarray(values, dtype=float).ravel()
        if vals.size != data.d:
            raise ValidationError(f"evaluation point has {vals.size} entries, expected {data.d}")
        return EvalPoint(vals, "user")
    raise ValidationError(f"unknown evaluation point tag {tag!r}")


@dataclass(frozen=True, eq=False)
class FitResult:
    beta: np.ndarray
    gamma: np.ndarray
    basis: BasisSpec
    model: ModelSpec
    eval_point: EvalPoint
    iterations: int
    converged: bool
    grad_inf_norm: float
    objective: float
    data: Dataset
    theta_obs: np.ndarray
    kappa: float | None = None
    objective_path: tuple = ()

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def w_eval(self) -> np.ndarray:
        """Evaluation point in the centered coordinates used by the fit."""
        return self.eval_point.values - self.data.w_means

    @property
    def index_shift(self) -> float:
        return float(self.w_eval @ self.gamma) if self.gamma.size else 0.0


def fit(
    data: Dataset,
    basis: BasisSpec,
    model: ModelSpec,
    eval_point: EvalPoint | None = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Fit the binscatter M-estimator; see the module docstring for the solver."""
    if eval_point is None:
        eval_point = make_eval_point(data)
    if eval_point.values.size != data.d:
        raise ValidationError("evaluation point dimension does not match the controls")
    y = model.check_y(data.y)
    counts = np.bincount(assign_bins(basis.partition, data.x), minlength=basis.nbins + 1)[1:]
    if np.any(counts == 0):
        empty = (np.flatnonzero(counts == 0) + 1).tolist()
        raise SingularSystem(f"bins {empty} contain no observations; reduce the number of bins")
    K, d = basis.dim, data.d
    if data.n <= K + d:
        raise SingularSystem(f"n={data.n} observations cannot identify {K + d} coefficients")

    B = design_matrix(basis, data.x)
    coef, info, kappa, keep = _solve(B, data, y, model, basis.bandwidth, max_iter)
    beta = coef[:K]
    gamma = np.zeros(d)
    gamma[keep] = coef[K:]
    theta = B @ beta + data.w @ gamma
    return FitResult(
        beta=beta,
        gamma=gamma,
        basis=basis,
        model=model,
        eval_point=eval_point,
        iterations=info["iterations"],
        converged=True,
        grad_inf_norm=info["grad"],
        objective=info["objective"],
        data=data,
        theta_obs=theta,
        kappa=kappa,
        objective_path=tuple(info["path"]),
    )


def _usable_controls(data: Dataset):
    """Drop controls that are constant (zero after centering)."""
    if data.d == 0:
        return np.zeros((data.n, 0)), np.zeros(0, dtype=bool)
    scale = np.abs(data.w_raw).max(axis=0)
    spread = np.abs(data.w).max(axis=0)
    keep = spread > 1e-12 * (1.0 + scale)
    if not np.all(keep):
        names = [nm for nm, k in zip(data.w_names, keep) if not k]
        warnings.warn(
            f"controls {names} are constant and collinear with the basis; their coefficients are set to 0",
            stacklevel=3,
        )
    return data.w[:, keep], keep


def _solve(B, data: Dataset, y, model: ModelSpec, bandwidth: int, max_iter: int):
    """Minimize the sample objective over ``[B | W]``; returns (coef, info, kappa, keep)."""
    W, keep = _usable_controls(data)
    ncoef = B.shape[1] + W.shape[1]
    problem = _Problem(B, W, y, model, bandwidth)
    gtol = 1e-8 * data.n * (1.0 + float(np.std(y)))
    kappa = None
    if model.family in ("ls", "logit"):
        coef, info = problem.newton(np.zeros(ncoef), None, gtol, max_iter)
    else:
        start, _ = _Problem(B, W, y, ModelSpec("ls"), bandwidth).newton(
            np.zeros(ncoef), None, gtol, max_iter
        )
        if model.family == "huber":
            coef, info = problem.newton(start, None, gtol, max_iter)
        else:
            coef, info, kappa = _quantile_path(problem, start, y, gtol, max_iter)
    if not info["converged"]:
        raise NoConvergence(
            f"{model} fit did not converge in {info['iterations']} iterations "
            f"(gradient norm {info['grad']:.3g}, tolerance {gtol:.3g})"
        )
    return coef, info, kappa, keep


def _quantile_path(problem, start, y, gtol, max_iter):
    q75, q25 = np.percentile(y, [75, 25])
    scale = q75 - q25
    if not scale > 0:
        scale = float(np.std(y)) or 1.0
    kappa = KAPPA_START * scale
    final = KAPPA_END * scale
    coef, total, path = start, 0, []
    while True:
        last = kappa <= final
        coef, info = problem.newton(coef, kappa, gtol, max_iter, strict=last)
        total += info["iterations"]
        path.extend(info["path"])
        if last:
            break
        kappa = max(0.5 * kappa, final)
    info["iterations"] = total
    info["path"] = path
    return coef, info, kappa


class _Problem:
    def __init__(self, B: sp.csr_matrix, W: np.ndarray, y, model: ModelSpec, bandwidth: int):
        self.B = B.tocsr()
        self.W = W
        self.y = y
        self.model = model
        self.u = bandwidth
        self.K = B.shape[1]

    def index(self, coef):
        theta = self.B @ coef[: self.K]
        if self.W.shape[1]:
            theta = theta + self.W @ coef[self.K :]
        return theta

    def objective(self, theta, kappa):
        return float(np.sum(self.model.objective_terms(self.y, theta, kappa)))

    def gradient(self, g):
        return np.concatenate((self.B.T @ g, self.W.T @ g))

    def step(self, g, h):
        """Newton direction for gradient weights g and curvature weights h."""
        Bh = self.B.multiply(h[:, None]).tocsr()
        A = (self.B.T @ Bh).toarray()
        ab = to_banded(A, self.u)
        ga, gd = self.B.T @ g, self.W.T @ g
        if self.W.shape[1]:
            C = (Bh.T @ self.W)
            D = self.W.T @ (self.W * h[:, None])
            da, dd = solve_bordered(ab, np.asarray(C), D, -ga, -gd)
        else:
            da, dd = solve_bordered(ab, None, None, -ga, np.zeros(0))
        return np.concatenate((da, dd))

    def slope(self, theta, dtheta, t, kappa):
        """Directional derivative of the objective at ``theta + t * dtheta``."""
        g, _ = self.model.theta_derivs(self.y, theta + t * dtheta, kappa)
        return float(g @ dtheta)

    def exact_step(self, theta, dtheta, kappa):
        """Minimize the convex 1-D restriction by bisection on its monotone slope."""
        hi = 1.0
        for _ in range(60):
            if self.slope(theta, dtheta, hi, kappa) >= 0.0:
                break
            hi *= 2.0
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.slope(theta, dtheta, mid, kappa) < 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return hi

    def newton(self, coef, kappa, gtol, max_iter, strict=True):
        """Damped Newton iterations from ``coef``.

        Smooth losses use step halving; piecewise-quadratic losses use an
        exact line search, since the unit step often badly undershoots there.
        Iteration stops at ``gtol`` or when no step lowers the objective
        (the rounding floor); with ``strict`` the floor counts as converged
        only if the gradient is within ``1e3 * gtol``.
        """
        coef = np.array(coef, dtype=float)
        theta = self.index(coef)
        obj = self.objective(theta, kappa)
        converged = False
        grad_norm = np.inf
        it = 0
        path = [(kappa, obj)]
        while True:
            g, h = self.model.theta_derivs(self.y, theta, kappa)
            grad_norm = float(np.abs(self.gradient(g)).max())
            if grad_norm <= gtol:
                converged = True
                break
            if it >= max_iter:
                break
            it += 1
            direction = self.step(g, h)
            dtheta = self.index(direction)
            if self.model.piecewise_quadratic:
                t = self.exact_step(theta, dtheta, kappa)
                cand_theta = theta + t * dtheta
                cand_obj = self.objective(cand_theta, kappa)
                accepted = cand_obj <= obj + 1e-13 * abs(obj)
            else:
                t, accepted = 1.0, False
                for _ in range(MAX_HALVINGS + 1):
                    cand_theta = theta + t * dtheta
                    cand_obj = self.objective(cand_theta, kappa)
                    if np.isfinite(cand_obj) and cand_obj <= obj:
                        accepted = True
                        break
                    t *= 0.5
            if not accepted:
                converged = grad_norm <= 1e3 * gtol
                break
            coef = coef + t * direction
            theta, obj = cand_theta, cand_obj
            path.append((kappa, obj))
        if not strict:
            converged = True
        info = {"converged": converged, "iterations": it, "grad": grad_norm, "objective": obj,
                "path": path}
        return coef, info


def _basis_at(fit: FitResult, x, v=0):
    return design_matrix(fit.basis, np.atleast_1d(np.asarray(x, dtype=float)), v)


def predict_mu(fit: FitResult, x, v: int = 0):
    """``b^(v)(x)' beta``."""
    if v > fit.basis.degree:
        raise InvalidDerivative(f"derivative {v} exceeds degree {fit.basis.degree}")
    out = _basis_at(fit, x, v) @ fit.beta
    return out if np.ndim(x) else float(out[0])


def predict_theta(fit: FitResult, x):
    return predict_mu(fit, x, 0) + fit.index_shift


def predict_level(fit: FitResult, x):
    out = fit.model.link(predict_theta(fit, x))
    return out if np.ndim(x) else float(out)


def predict_marginal(fit: FitResult, x):
    if fit.basis.degree < 1:
        raise InvalidDerivative("the marginal effect needs degree p >= 1")
    out = fit.model.link_d1(predict_theta(fit, x)) * predict_mu(fit, x, 1)
    return out if np.ndim(x) else float(out)


def predict(fit: FitResult, x, target: str = "level", v: int = 0):
    """Dispatch on target: ``level``, ``mu`` (with derivative v) or ``marginal``."""
    if target == "level":
        return predict_level(fit, x)
    if target == "mu":
        return predict_mu(fit, x, v)
    if target == "marginal":
        return predict_marginal(fit, x)
    raise ValidationError(f"unknown target {target!r}")


def stationarity(fit: FitResult) -> float:
    """Infinity norm of the score ``sum_i psi_i * eta'(theta_i) * [b(x_i); w_i]``."""
    model, theta = fit.model, fit.theta_obs
    if model.family == "quantile":
        g, _ = model.theta_derivs(fit.data.y, theta, fit.kappa)
    else:
        g, _ = model.theta_derivs(fit.data.y, theta)
    B = design_matrix(fit.basis, fit.data.x)
    W, _ = _usable_controls(fit.data)
    score = np.concatenate((B.T @ g, W.T @ g))
    return float(np.abs(score).max())


@dataclass(frozen=True, eq=False)
class PolyFit:
    """Global polynomial index ``sum_k c_k u^k + w'gamma`` with ``u = (x - center) / half``."""

    coef: np.ndarray
    gamma: np.ndarray
    center: float
    half: float
    model: ModelSpec
    eval_point: EvalPoint
    data: Dataset
    theta_obs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coef.size - 1

    @property
    def index_shift(self) -> float:
        w_eval = self.eval_point.values - self.data.w_means
        return float(w_eval @ self.gamma) if self.gamma.size else 0.0

    def mu(self, x, v: int = 0):
        """``v``-th derivative in x of the polynomial part."""
        u = (np.asarray(x, dtype=float) - self.center) / self.half
        poly = np.polynomial.Polynomial(self.coef)
        return poly.deriv(v)(u) / self.half**v if v else poly(u)

    def theta(self, x):
        return self.mu(x) + self.index_shift

    def level(self, x):
        return self.model.link(self.theta(x))

    def marginal(self, x):
        return self.model.link_d1(self.theta(x)) * self.mu(x, 1)


def fit_polynomial(
    data: Dataset, degree: int, model: ModelSpec, eval_point: EvalPoint | None = None,
    max_iter: int = MAX_ITER,
) -> PolyFit:
    """Fit a global degree-``degree`` polynomial index (plus controls) with the model's loss."""
    if eval_point is None:
        eval_point = make_eval_point(data)
    y = model.check_y(data.y)
    lo, hi = float(data.x.min()), float(data.x.max())
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if not half > 0:
        raise SingularSystem("x has no spread; cannot fit a polynomial in x")
    u = (data.x - center) / half
    V = np.vander(u, degree + 1, increasing=True)
    if data.n <= degree + 1 + data.d:
        raise SingularSystem(f"n={data.n} observations cannot identify a degree-{degree} polynomial")
    coef, _, _, keep = _solve(sp.csr_matrix(V), data, y, model, degree, max_iter)
    gamma = np.zeros(data.d)
    gamma[keep] = coef[degree + 1 :]
    theta = V @ coef[: degree + 1] + data.w @ gamma
    return PolyFit(coef[: degree + 1], gamma, center, half, model, eval_point, data, theta)
