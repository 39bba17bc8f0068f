"""Banded symmetric solves and the bordered (basis | controls) Newton system."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SingularSystem


def to_banded(mat, bandwidth: int) -> np.ndarray:
    """Upper banded storage ``ab[u + i - j, j] = a[i, j]`` of a symmetric matrix."""
    if sp.issparse(mat):
        mat = mat.toarray()
    mat = np.asarray(mat, dtype=float)
    K = mat.shape[0]
    ab = np.zeros((bandwidth + 1, K))
    for d in range(bandwidth + 1):
        ab[bandwidth - d, d:] = np.diagonal(mat, offset=d)
    return ab


def from_banded(ab: np.ndarray) -> np.ndarray:
    u, K = ab.shape[0] - 1, ab.shape[1]
    out = np.zeros((K, K))
    for d in range(u + 1):
        diag = ab[u - d, d:]
        out += np.diag(diag, k=d)
        if d:
            out += np.diag(diag, k=-d)
    return out


class BandedCholesky:
    """Cholesky factor ``A = U'U`` of a symmetric positive definite banded matrix."""

    def __init__(self, ab: np.ndarray, what: str = "matrix"):
        self.bandwidth = ab.shape[0] - 1
        self.dim = ab.shape[1]
        try:
            self.cb = sla.cholesky_banded(ab, lower=False, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(f"{what} is not positive definite: {exc}") from None
        diag = self.cb[-1]
        if diag.min() <= 1e-10 * diag.max():
            raise SingularSystem(f"{what} is numerically singular")

    @classmethod
    def from_matrix(cls, mat, bandwidth: int, what: str = "matrix") -> "BandedCholesky":
        return cls(to_banded(mat, bandwidth), what)

    def solve(self, rhs):
        return sla.cho_solve_banded((self.cb, False), rhs, check_finite=False)

    def factor(self) -> np.ndarray:
        """Dense upper-triangular U with ``A = U'U``."""
        return from_banded_upper(self.cb)


def from_banded_upper(cb: np.ndarray) -> np.ndarray:
    u, K = cb.shape[0] - 1, cb.shape[1]
    out = np.zeros((K, K))
    for d in range(u + 1):
        out += np.diag(cb[u - d, d:], k=d)
    return out


def solve_bordered(A_banded: np.ndarray, C, D, rhs_a, rhs_d, what="Hessian"):
    """Solve ``[[A, C], [C', D]] [a; d] = [rhs_a; rhs_d]`` with A banded SPD.

    The K x K block is factored in banded form and the d x d block is
    handled through the Schur complement ``D - C' A^{-1} C``.
    """
    chol = BandedCholesky(A_banded, what=what)
    if C is None or np.size(D) == 0:
        return chol.solve(rhs_a), np.zeros(0)
    C = np.asarray(C, dtype=float)
    AinvC = chol.solve(C)
    Ainv_ra = chol.solve(rhs_a)
    schur = np.asarray(D, dtype=float) - C.T @ AinvC
    schur = 0.5 * (schur + schur.T)
    rhs_s = rhs_d - C.T @ Ainv_ra
    try:
        sfac = sla.cho_factor(schur, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        raise SingularSystem(
            f"{what}: controls are collinear with the binscatter basis"
        ) from None
    sdiag = np.abs(np.diag(sfac[0]))
    ref = np.sqrt(np.abs(np.diag(D)).max()) if np.size(D) else 1.0
    if sdiag.min() <= 1e-7 * max(ref, 1e-300):
        raise SingularSystem(f"{what}: controls are collinear with the binscatter basis")
    d = sla.cho_solve(sfac, rhs_s, check_finite=False)
    a = Ainv_ra - AinvC @ d
    return a, d
