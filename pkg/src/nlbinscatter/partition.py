"""Partitions of the support of x into J bins.

Bins are left-closed, ``[t[j-1], t[j])``, except the last one which is closed
on both sides. Bin indices returned by :func:`assign_bins` are 1-based.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePartition, OutOfSupport, QuasiUniformityWarning

SCHEMES = ("quantile", "even", "user")


@dataclass(frozen=True, eq=False)
class Partition:
    knots: np.ndarray
    scheme: str = "user"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).copy()
        if knots.ndim != 1 or knots.size < 2:
            raise DegeneratePartition("a partition needs at least two knots")
        if not np.all(np.isfinite(knots)):
            raise DegeneratePartition("knots must be finite")
        if np.any(np.diff(knots) <= 0):
            raise DegeneratePartition(
                f"knots must be strictly increasing, got {knots.tolist()}"
            )
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def nbins(self) -> int:
        return self.knots.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def lower(self) -> float:
        return float(self.knots[0])

    @property
    def upper(self) -> float:
        return float(self.knots[-1])

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.scheme == other.scheme and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.scheme, self.knots.tobytes()))

    def __repr__(self):
        return f"Partition(nbins={self.nbins}, scheme={self.scheme!r}, knots={self.knots.tolist()})"


def quantile_knots(x, J: int) -> Partition:
    """Knots at the empirical quantiles j/J, with the sample min and max as endpoints.

    Interior knot j is ``inf{u : F_n(u) >= j/J}``, i.e. the order statistic
    ``x_(ceil(n j / J))``. Coinciding knots raise DegeneratePartition.
    """
    J = _check_nbins(J)
    xs = np.sort(np.asarray(x, dtype=float).ravel())
    n = xs.size
    if n == 0:
        raise DegeneratePartition("empty sample")
    if np.unique(xs).size < J + 1:
        raise DegeneratePartition(
            f"{J} bins requested but x has only {np.unique(xs).size} distinct values"
        )
    # ceil(n*j/J) in exact integer arithmetic
    ranks = np.array([-(-n * j // J) for j in range(1, J)], dtype=int)
    knots = np.concatenate(([xs[0]], xs[ranks - 1], [xs[-1]]))
    if np.any(np.diff(knots) <= 0):
        raise DegeneratePartition(
            f"quantile knots coincide for J={J}; too many bins for the tied x values"
        )
    return Partition(knots, scheme="quantile")


def even_knots(x, J: int) -> Partition:
    J = _check_nbins(J)
    x = np.asarray(x, dtype=float).ravel()
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise DegeneratePartition("evenly spaced knots need max(x) > min(x)")
    knots = lo + np.arange(J + 1) * (hi - lo) / J
    knots[-1] = hi
    return Partition(knots, scheme="even")


def user_knots(knots) -> Partition:
    return Partition(np.asarray(knots, dtype=float), scheme="user")


def assign_bins(part: Partition, x) -> np.ndarray:
    """1-based bin index of each x; the last bin is closed on the right."""
    x = np.asarray(x, dtype=float)
    knots = part.knots
    bad = ~((x >= knots[0]) & (x <= knots[-1]))
    if np.any(bad):
        first = x[bad].ravel()[0]
        raise OutOfSupport(
            f"x={first!r} outside the partition range [{knots[0]!r}, {knots[-1]!r}]"
        )
    idx = np.searchsorted(knots, x, side="right")
    return np.minimum(idx, part.nbins).astype(int)


def quasi_uniform_ratio(part: Partition) -> float:
    h = part.widths
    return float(h.max() / h.min())


def check_quasi_uniform(part: Partition, threshold: float = 50.0) -> float:
    ratio = quasi_uniform_ratio(part)
    if ratio > threshold:
        warnings.warn(
            f"bin widths differ by a factor {ratio:.3g} (> {threshold:g}); "
            "the partition is far from quasi-uniform",
            QuasiUniformityWarning,
            stacklevel=2,
        )
    return ratio


def make_partition(x, J: int, scheme: str = "quantile", knots=None) -> Partition:
    if scheme == "quantile":
        return quantile_knots(x, J)
    if scheme == "even":
        return even_knots(x, J)
    if scheme == "user":
        if knots is None:
            raise DegeneratePartition("user-supplied scheme needs explicit knots")
        return user_knots(knots)
    raise ValueError(f"unknown partition scheme {scheme!r}")


def _check_nbins(J) -> int:
    if int(J) != J or J < 1:
        raise DegeneratePartition(f"number of bins must be a positive integer, got {J!r}")
    return int(J)
