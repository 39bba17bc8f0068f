"""Loss and link families.

Each family is a loss ``rho(y; eta)`` composed with an inverse link
``eta(theta)``. ``psi`` is the derivative of ``rho`` in ``eta`` and factors
as ``psi_dagger(y - eta) * psi_ddagger(eta)``.

Conventions:

* least squares uses ``0.5 * (y - eta)**2``, so ``psi = -(y - eta)``;
* Huber uses ``r**2`` inside ``|r| <= tau`` and ``tau * (2|r| - tau)`` outside;
* quantile uses the check loss ``(tau - 1{r < 0}) * r`` with ``r = y - eta``;
* logit uses the Bernoulli deviance and accepts fractional ``y`` in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import DomainError

FAMILIES = ("ls", "logit", "quantile", "huber")
TAIL_CURVATURE = 0.01


@dataclass(frozen=True)
class ModelSpec:
    family: str
    tau: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown model family {self.family!r}")
        if self.family == "quantile":
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise DomainError(f"quantile level must lie in (0, 1), got {self.tau!r}")
        elif self.family == "huber":
            if self.tau is None or not self.tau > 0.0:
                raise DomainError(f"Huber threshold must be positive, got {self.tau!r}")
        elif self.tau is not None:
            raise DomainError(f"family {self.family!r} takes no parameter")

    @property
    def identity_link(self) -> bool:
        return self.family != "logit"

    def __str__(self):
        return self.family if self.tau is None else f"{self.family}:{self.tau:g}"

    # inverse link and its derivatives

    def link(self, theta):
        theta = np.asarray(theta, dtype=float)
        return expit(theta) if self.family == "logit" else theta

    def link_d1(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.family == "logit":
            e = expit(theta)
            return e * (1.0 - e)
        return np.ones_like(theta)

    def link_d2(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.family == "logit":
            e = expit(theta)
            return e * (1.0 - e) * (1.0 - 2.0 * e)
        return np.zeros_like(theta)

    # loss in terms of eta

    def check_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "logit" and np.any((y < 0.0) | (y > 1.0)):
            raise DomainError("logit outcomes must lie in [0, 1]")
        return y

    def loss(self, y, eta):
        y = self.check_y(y)
        eta = np.asarray(eta, dtype=float)
        fam = self.family
        if fam == "ls":
            return 0.5 * (y - eta) ** 2
        if fam == "logit":
            return -(xlogy(y, eta) + xlogy(1.0 - y, 1.0 - eta))
        r = y - eta
        if fam == "quantile":
            return r * (self.tau - (r < 0))
        a = np.abs(r)
        return np.where(a <= self.tau, r**2, self.tau * (2.0 * a - self.tau))

    def psi_dagger(self, r):
        r = np.asarray(r, dtype=float)
        fam = self.family
        if fam in ("ls", "logit"):
            return -r
        if fam == "quantile":
            return (r < 0).astype(float) - self.tau
        return -2.0 * np.clip(r, -self.tau, self.tau)

    def psi_ddagger(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.family == "logit":
            if np.any((eta <= 0.0) | (eta >= 1.0)):
                raise DomainError("logit psi needs eta strictly inside (0, 1)")
            return 1.0 / (eta * (1.0 - eta))
        return np.ones_like(eta)

    def psi(self, y, eta):
        y = self.check_y(y)
        eta = np.asarray(eta, dtype=float)
        return self.psi_dagger(y - eta) * self.psi_ddagger(eta)

    # loss in terms of the index theta, as used by the solver

    def objective_terms(self, y, theta, kappa=None):
        """Per-observation ``rho(y; eta(theta))``; smoothed check loss when ``kappa`` is set."""
        if self.family == "logit":
            # log(1 + e^theta) - y*theta, stable for large |theta|
            theta = np.asarray(theta, dtype=float)
            return np.logaddexp(0.0, theta) - y * theta
        if self.family == "quantile" and kappa is not None:
            return _moreau_check(y - np.asarray(theta, dtype=float), self.tau, kappa)
        return self.loss(y, self.link(theta))

    @property
    def piecewise_quadratic(self) -> bool:
        """Huber and the smoothed check loss: quadratic zone, linear tails."""
        return self.family in ("huber", "quantile")

    def theta_derivs(self, y, theta, kappa=None):
        """Gradient in theta and the Newton curvature weight per observation.

        LS and logit return the exact second derivative. Huber and the
        smoothed check loss return the generalized second derivative on the
        quadratic zone and a small multiple (``TAIL_CURVATURE``) of the IRLS
        weight ``psi(r) / r`` on the linear tails, which keeps the Newton
        system nonsingular when few observations sit inside the zone.
        """
        theta = np.asarray(theta, dtype=float)
        fam = self.family
        if fam == "ls":
            return theta - y, np.ones_like(theta)
        if fam == "logit":
            e = expit(theta)
            return e - y, e * (1.0 - e)
        r = y - theta
        a = np.abs(r)
        if fam == "huber":
            tau = self.tau
            grad = -2.0 * np.clip(r, -tau, tau)
            tail = 2.0 * tau / np.maximum(a, 1e-300)
            return grad, np.where(a <= tau, 2.0, TAIL_CURVATURE * tail)
        if kappa is None:
            raise ValueError("quantile solver needs a smoothing level kappa")
        tau = self.tau
        d = _moreau_check_d1(r, tau, kappa)
        inside = (r <= tau * kappa) & (r >= -(1.0 - tau) * kappa)
        tail = np.abs(d) / np.maximum(a, 1e-300)
        return -d, np.where(inside, 1.0 / kappa, TAIL_CURVATURE * tail)


def _moreau_check(r, tau, kappa):
    hi, lo = tau * kappa, -(1.0 - tau) * kappa
    return np.where(
        r > hi,
        tau * r - 0.5 * kappa * tau**2,
        np.where(r < lo, (tau - 1.0) * r - 0.5 * kappa * (1.0 - tau) ** 2, 0.5 * r**2 / kappa),
    )


def _moreau_check_d1(r, tau, kappa):
    return np.clip(r / kappa, tau - 1.0, tau)


def rho(model: ModelSpec, y, theta):
    """Loss ``rho(y; eta(theta))``."""
    return model.loss(y, model.link(theta))


def psi(model: ModelSpec, y, eta):
    return model.psi(y, eta)


def parse_model(text: str) -> ModelSpec:
    """Parse ``ls``, ``logit``, ``quantile:<tau>`` or ``huber:<tau>``."""
    name, _, arg = text.strip().lower().partition(":")
    if name in ("ls", "logit"):
        if arg:
            raise DomainError(f"model {name!r} takes no parameter")
        return ModelSpec(name)
    if name in ("quantile", "huber"):
        if not arg:
            raise DomainError(f"model {name!r} needs a parameter, e.g. {name}:0.5")
        try:
            tau = float(arg)
        except ValueError:
            raise DomainError(f"bad parameter {arg!r} for model {name!r}") from None
        return ModelSpec(name, tau)
    raise DomainError(f"unknown model {text!r}")
