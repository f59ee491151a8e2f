"""Datasets: CSV ingest, unit-box rescaling and seeded synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for unreadable, malformed or out-of-domain input data."""


@dataclass(frozen=True)
class Dataset:
    rows: np.ndarray
    labels: np.ndarray | None = None
    feature_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise DataError(f"rows must be a non-empty N x D matrix, got shape {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (rows.shape[0],):
                raise DataError(f"labels length {labels.shape} does not match N={rows.shape[0]}")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def in_unit_box(self) -> bool:
        return bool(np.all(np.abs(self.rows) <= 1.0))

    def summary(self) -> dict:
        out = {"n": self.n, "d": self.d, "has_labels": self.labels is not None}
        out.update(self.meta)
        return out


def factorize(values) -> np.ndarray:
    """Map arbitrary label values to integers 0..C-1 in order of first appearance."""
    seen: dict = {}
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        out[i] = seen.setdefault(v, len(seen))
    return out


def load_csv(path, has_header: bool = False, label_column: str | int | None = None) -> Dataset:
    """Read a comma-separated file of reals.

    ``label_column`` is a header name when ``has_header`` is set, otherwise a
    zero-based column index. Label strings are factorized to 0..C-1. Row
    numbers in error messages are 1-based data rows (the header is not counted).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    header = None
    if has_header and records:
        header = [h.strip() for h in records[0]]
        records = records[1:]
    if not records:
        raise DataError(f"{path}: empty file")

    width = len(records[0])
    label_idx = None
    if label_column is not None:
        if header is not None and not isinstance(label_column, int):
            if label_column not in header:
                raise DataError(f"{path}: label column {label_column!r} not in header {header}")
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise DataError(f"{path}: label column index {label_idx} out of range")

    rows, raw_labels = [], []
    for i, rec in enumerate(records, start=1):
        if len(rec) != width:
            raise DataError(f"{path}: row {i} has {len(rec)} columns, expected {width}")
        vals = []
        for j, cell in enumerate(rec):
            if j == label_idx:
                raw_labels.append(cell.strip())
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {j + 1}: cannot parse {cell!r} as a real") from None
            if not np.isfinite(v):
                raise DataError(f"{path}: row {i}, column {j + 1}: non-finite value {cell!r}")
            vals.append(v)
        rows.append(vals)

    names = None
    if header is not None:
        names = [h for j, h in enumerate(header) if j != label_idx]
    labels = factorize(raw_labels) if label_idx is not None else None
    return Dataset(np.array(rows, dtype=float), labels, names, {"source": str(path)})


def rescale_unit_box(d: Dataset, bounds=None) -> Dataset:
    """Affinely map each feature from [lo, hi] onto [-1, 1].

    Without ``bounds`` the per-feature min/max of the data are used; that is
    data-dependent and the result is tagged ``bounds_source: data`` so that
    reports never claim a privacy guarantee for it. Constant features map to 0.
    """
    x = d.rows
    if not np.all(np.isfinite(x)):
        raise DataError("cannot rescale non-finite values")
    if bounds is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
        source = "data"
    else:
        b = np.asarray(bounds, dtype=float)
        if b.shape != (d.d, 2):
            raise DataError(f"bounds must have shape ({d.d}, 2), got {b.shape}")
        lo, hi = b[:, 0], b[:, 1]
        if np.any(lo >= hi):
            raise DataError("each bound pair must satisfy lo < hi")
        source = "user"
    width = hi - lo
    const = width == 0
    safe = np.where(const, 1.0, width)
    out = np.where(const, 0.0, 2.0 * (x - lo) / safe - 1.0)
    meta = dict(d.meta)
    meta["bounds_source"] = source
    meta["bounds"] = np.column_stack([lo, hi]).tolist()
    return Dataset(out, d.labels, d.feature_names, meta)


def inverse_rescale(d: Dataset, bounds) -> Dataset:
    b = np.asarray(bounds, dtype=float)
    lo, hi = b[:, 0], b[:, 1]
    return Dataset((d.rows + 1.0) * (hi - lo) / 2.0 + lo, d.labels, d.feature_names, dict(d.meta))


def _moon_arcs(n: int):
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    return [outer, inner]


def _finish(arcs, noise, seed, lo, hi, name):
    rng = np.random.default_rng(seed)
    x = np.vstack(arcs)
    y = np.concatenate([np.full(len(a), i) for i, a in enumerate(arcs)])
    if noise > 0:
        x = x + rng.normal(scale=noise, size=x.shape)
    # Public bounds from the noiseless geometry padded by 3 noise widths.
    pad = 3.0 * noise
    bounds = np.column_stack([np.asarray(lo) - pad, np.asarray(hi) + pad])
    scaled = rescale_unit_box(Dataset(x, y), bounds)
    rows = np.clip(scaled.rows, -1.0, 1.0)
    meta = {"source": name, "noise": noise, "seed": seed, "bounds_source": "user",
            "bounds": bounds.tolist()}
    return Dataset(rows, y, ["x", "y"], meta)


def make_two_moons(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two interleaving half circles, rescaled to [-1, 1]^2, labels {0, 1}."""
    if n < 2:
        raise DataError("make_two_moons needs n >= 2")
    if noise < 0:
        raise DataError("noise must be non-negative")
    return _finish(_moon_arcs(n), noise, seed, (-1.0, -0.5), (2.0, 1.0), "two_moons")


def make_three_arcs(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """The two moons plus a third upper arc continuing the snake to the right."""
    if n < 3:
        raise DataError("make_three_arcs needs n >= 3")
    if noise < 0:
        raise DataError("noise must be non-negative")
    per = n // 3
    arcs = _moon_arcs(2 * per)
    t = np.linspace(0.0, np.pi, n - 2 * per)
    arcs.append(np.column_stack([3.0 + np.cos(t), np.sin(t)]))
    return _finish(arcs, noise, seed, (-1.0, -0.5), (4.0, 1.0), "three_arcs")


def make_blobs(centers, sigma: float, n_per: int, seed: int = 0) -> Dataset:
    """Isotropic Gaussian blobs inside the unit box, labeled by source blob."""
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    if sigma < 0 or n_per < 1:
        raise DataError("need sigma >= 0 and n_per >= 1")
    if np.any(np.abs(c) + 3.0 * sigma >= 1.0):
        raise DataError("every center must lie inside (-1, 1)^D with a 3*sigma margin")
    rng = np.random.default_rng(seed)
    k, dim = c.shape
    x = np.repeat(c, n_per, axis=0)
    if sigma > 0:
        x = x + rng.normal(scale=sigma, size=x.shape)
    x = np.clip(x, -1.0, 1.0)
    y = np.repeat(np.arange(k), n_per)
    meta = {"source": "blobs", "sigma": sigma, "seed": seed, "bounds_source": "user"}
    return Dataset(x, y, None, meta)


BLOB_CENTERS = ((-0.5, 0.0), (0.5, 0.0))


def make_default_blobs(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two blobs at (+-0.5, 0) with std-dev ``noise``, n // 2 rows each."""
    if n < 2:
        raise DataError("blobs need n >= 2")
    return make_blobs(BLOB_CENTERS, noise, n // 2, seed)


GENERATORS = {
    "two_moons": make_two_moons,
    "three_arcs": make_three_arcs,
    "blobs": make_default_blobs,
}
