"""Binscatter bases on a partition.

Two smoothness levels are supported:

* ``s = 0``: discontinuous piecewise polynomials. Within bin j the entries
  are ``sqrt(J) * z**k`` for ``k = 0..p`` with ``z = (x - t[j-1]) / h_j``.
* ``s = p``: B-splines of degree p with simple interior knots and boundary
  knots repeated p+1 times, scaled by ``sqrt(J)``.

The smoothed basis is formally ``T_s`` times the ``s = 0`` basis; for
``s = p`` we evaluate the B-splines directly instead of forming ``T_s``.
Evaluation exactly at an interior knot uses the right-hand bin, so
derivatives there are one-sided from the right.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

from .errors import InvalidDerivative, UnsupportedSmoothness
from .partition import Partition, assign_bins


@dataclass(frozen=True)
class BasisSpec:
    degree: int
    smoothness: int
    partition: Partition

    def __post_init__(self):
        p, s = int(self.degree), int(self.smoothness)
        if p < 0:
            raise UnsupportedSmoothness(f"degree must be >= 0, got {p}")
        if s not in (0, p):
            raise UnsupportedSmoothness(
                f"smoothness must be 0 or equal to the degree ({p}), got {s}"
            )
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "smoothness", s)

    @property
    def nbins(self) -> int:
        return self.partition.nbins

    @property
    def dim(self) -> int:
        p, s, J = self.degree, self.smoothness, self.nbins
        return (p + 1) * J - s * (J - 1)

    @property
    def bandwidth(self) -> int:
        """Number of super-diagonals of B'WB (overlap of supports)."""
        return self.degree

    @property
    def is_spline(self) -> bool:
        return self.smoothness == self.degree and self.degree > 0

    def full_knot_vector(self) -> np.ndarray:
        p, knots = self.degree, self.partition.knots
        return np.concatenate((np.repeat(knots[0], p), knots, np.repeat(knots[-1], p)))

    def raised(self) -> "BasisSpec":
        """Degree p+1 basis on the same partition (robust bias correction).

        Splines stay maximally smooth; piecewise polynomials (including
        p = 0) stay discontinuous.
        """
        p = self.degree
        s = p + 1 if self.is_spline else 0
        return BasisSpec(p + 1, s, self.partition)


def local_basis(spec: BasisSpec, x, v: int = 0):
    """Nonzero basis values at each x.

    Returns ``(first, values)`` where ``values[i, k]`` is basis function
    ``first[i] + k`` evaluated at ``x[i]`` (0-based), ``k = 0..p``.
    """
    p = spec.degree
    if v < 0 or v > p:
        raise InvalidDerivative(f"derivative order {v} not available for degree {p}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bins = assign_bins(spec.partition, x) - 1
    scale = np.sqrt(spec.nbins)
    if spec.smoothness == 0 or p == 0:
        knots = spec.partition.knots
        h = knots[bins + 1] - knots[bins]
        z = (x - knots[bins]) / h
        vals = np.zeros((x.size, p + 1))
        for k in range(v, p + 1):
            coef = factorial(k) / factorial(k - v)
            vals[:, k] = coef * z ** (k - v) / h**v
        first = bins * (p + 1)
    else:
        vals = _bspline_ders(spec.full_knot_vector(), p, bins + p, x, v)
        first = bins
    return first, vals * scale


def _bspline_ders(t, p, span, x, v):
    """Derivative ``v`` of the p+1 nonzero B-splines on ``[t[span], t[span+1])``.

    Triangular Cox-de Boor table followed by the standard derivative
    recurrence on the table's lower-degree rows; vectorized over x.
    """
    n = x.size
    left = np.empty((p + 1, n))
    right = np.empty((p + 1, n))
    # ndu[j][r]: upper triangle holds basis values, lower triangle knot differences
    ndu = np.empty((p + 1, p + 1, n))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - t[span + 1 - j]
        right[j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    if v == 0:
        return ndu[:, p].T.copy()

    out = np.empty((n, p + 1))
    a = np.empty((2, p + 1, n))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, v + 1):
            d = np.zeros(n)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            s1, s2 = s2, s1
        out[:, r] = d
    coef = factorial(p) / factorial(p - v)
    return out * coef


def eval_basis(spec: BasisSpec, x: float, v: int = 0) -> dict[int, float]:
    """Sparse basis vector at a single point as ``{index: value}`` (0-based)."""
    first, vals = local_basis(spec, [x], v)
    return {int(first[0]) + k: float(val) for k, val in enumerate(vals[0]) if val != 0.0}


def basis_dense(spec: BasisSpec, x, v: int = 0) -> np.ndarray:
    return design_matrix(spec, x, v).toarray()


def design_matrix(spec: BasisSpec, x, v: int = 0) -> sp.csr_matrix:
    """n x K sparse matrix whose row i is the (v-th derivative) basis at x[i]."""
    first, vals = local_basis(spec, x, v)
    n, width = vals.shape
    rows = np.repeat(np.arange(n), width)
    cols = (first[:, None] + np.arange(width)[None, :]).ravel()
    mat = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, spec.dim))
    mat.eliminate_zeros()
    return mat
