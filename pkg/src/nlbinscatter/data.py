"""Datasets and CSV ingestion."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyData, EmptyGroup, FileError, SchemaError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``(y, x, w)`` with controls centered at their sample means.

    ``w_means`` keeps the centering constants so evaluation points can be
    given in the original units of the controls.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    w_names: tuple[str, ...] = ()
    w_means: np.ndarray = field(default_factory=lambda: np.zeros(0))
    group: np.ndarray | None = None
    dropped_rows: int = 0

    @classmethod
    def from_arrays(cls, y, x, w=None, w_names=None, group=None, dropped_rows=0) -> "Dataset":
        y = np.asarray(y, dtype=float).ravel()
        x = np.asarray(x, dtype=float).ravel()
        n = y.size
        if x.size != n:
            raise SchemaError(f"y has {n} rows but x has {x.size}")
        if w is None:
            w = np.zeros((n, 0))
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[0] != n:
            raise SchemaError(f"w has {w.shape[0]} rows, expected {n}")
        if w_names is None:
            w_names = tuple(f"w{k + 1}" for k in range(w.shape[1]))
        w_names = tuple(w_names)
        if len(w_names) != w.shape[1] or len(set(w_names)) != len(w_names):
            raise SchemaError("control names must be unique and match the columns of w")
        if n < 2:
            raise EmptyData(f"need at least 2 observations, got {n}")
        finite = np.isfinite(y) & np.isfinite(x) & np.all(np.isfinite(w), axis=1)
        if not np.all(finite):
            raise SchemaError("Dataset.from_arrays needs finite values; use load_csv to drop rows")
        means = w.mean(axis=0) if w.shape[1] else np.zeros(0)
        if group is not None:
            group = np.asarray(group).ravel()
            if group.size != n:
                raise SchemaError("group labels must have one entry per row")
        return cls(y, x, w - means, w_names, means, group, int(dropped_rows))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def w_raw(self) -> np.ndarray:
        return self.w + self.w_means

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        group = None if self.group is None else self.group[mask]
        return Dataset.from_arrays(
            self.y[mask], self.x[mask], self.w_raw[mask], self.w_names, group=group
        )

    def split_groups(self) -> dict:
        """Map each group label to its own (re-centered) Dataset, labels sorted."""
        if self.group is None:
            raise EmptyGroup("dataset has no group column")
        out = {}
        for label in sorted(set(self.group.tolist())):
            mask = self.group == label
            if mask.sum() < 2:
                raise EmptyGroup(f"group {label!r} has fewer than 2 observations")
            out[label] = self.subset(mask)
        return out


def load_csv(path, y_col: str, x_col: str, w_cols=(), group_col: str | None = None) -> Dataset:
    """Read a CSV with a header row; rows with missing or non-numeric used values are dropped."""
    path = Path(path)
    if not path.is_file():
        raise FileError(f"no such file: {path}")
    w_cols = list(w_cols or ())
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if not header:
                raise SchemaError(f"{path} has no header row")
            wanted = [y_col, x_col, *w_cols] + ([group_col] if group_col else [])
            for col in wanted:
                if col not in header:
                    raise SchemaError(f"column {col!r} not found in {path}")
            if len(set(wanted)) != len(wanted):
                raise SchemaError("the same column is used twice")
            ys, xs, ws, gs = [], [], [], []
            dropped = 0
            for row in reader:
                vals = [_to_float(row.get(c)) for c in (y_col, x_col, *w_cols)]
                label = row.get(group_col, "").strip() if group_col else None
                if any(v is None for v in vals) or (group_col and not label):
                    dropped += 1
                    continue
                ys.append(vals[0])
                xs.append(vals[1])
                ws.append(vals[2:])
                gs.append(label)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise FileError(f"cannot read {path}: {exc}") from None
    if dropped:
        warnings.warn(f"dropped {dropped} row(s) with missing or non-numeric values", stacklevel=2)
    if len(ys) < 2:
        raise EmptyData(f"{len(ys)} usable row(s) in {path}")
    w = np.array(ws, dtype=float).reshape(len(ys), len(w_cols))
    group = np.array(gs) if group_col else None
    return Dataset.from_arrays(ys, xs, w, tuple(w_cols), group=group, dropped_rows=dropped)


def _to_float(text):
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    try:
        val = float(text)
    except ValueError:
        return None
    return val if math.isfinite(val) else None
