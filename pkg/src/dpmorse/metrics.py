"""Pair-counting agreement between two partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import factorize


@dataclass
class Contingency:
    table: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    @property
    def total(self) -> int:
        return int(self.table.sum())


def contingency(a, b) -> Contingency:
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("need at least one label")
    ia, ib = factorize(a), factorize(b)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return Contingency(table, table.sum(axis=1), table.sum(axis=0))


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return int(np.sum(x * (x - 1) // 2))


def adjusted_rand_index(a, b, return_flag: bool = False):
    """Adjusted Rand index; 0.0 (flagged) when the chance-corrected denominator vanishes."""
    c = contingency(a, b)
    n = c.total
    if n < 2:
        raise ValueError("ARI needs at least two points")
    index = _pairs(c.table)
    sa, sb = _pairs(c.rows), _pairs(c.cols)
    # (index - expected) / (max - expected) scaled by 2 * total pairs: all integers
    total = n * (n - 1) // 2
    num = 2 * (index * total - sa * sb)
    den = (sa + sb) * total - 2 * sa * sb
    if den == 0:
        return (0.0, True) if return_flag else 0.0
    ari = num / den
    return (ari, False) if return_flag else ari
