"""Shared machinery for the two tree growers.

Both the boosted trees and the weighted segmentation tree maintain, per
node, a (features x rows) matrix of row ids sorted by each feature with
NaN rows at the tail. The root ordering is a stable argsort; children
inherit order by stable partition, which preserves both the sort and the
NaN-tail invariant. Node aggregates use cumsum (a strict left fold) so
that Python-level totals match the compiled kernels bit for bit.
"""

from __future__ import annotations

import numpy as np

__all__ = ["build_orders", "partition_orders", "seq_sum", "split_mask"]


def build_orders(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort of the full matrix, shape (p, n) int32."""
    n, p = X.shape
    order = np.empty((p, n), dtype=np.int32)
    for f in range(p):
        order[f] = np.argsort(X[:, f], kind="stable").astype(np.int32)
    return order


def partition_orders(order: np.ndarray, lookup: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a node's order matrix by a row-id boolean lookup (True = left).

    Every feature row of ``order`` holds the same row-id set, so the left
    count is identical across features and the flattened boolean take can
    be reshaped back to matrices.
    """
    p, m = order.shape
    sel = lookup[order]
    k = int(np.count_nonzero(sel[0]))
    left = order[sel].reshape(p, k)
    right = order[~sel].reshape(p, m - k)
    return np.ascontiguousarray(left), np.ascontiguousarray(right)


def seq_sum(values: np.ndarray, rows: np.ndarray) -> float:
    """Left-fold sum of values[rows], matching kernel accumulation order."""
    if len(rows) == 0:
        return 0.0
    return float(np.cumsum(values[rows])[-1])


def split_mask(X: np.ndarray, rows: np.ndarray, feature: int, threshold: float,
               missing_left: bool) -> np.ndarray:
    """Which of the node's rows go left under (feature <= threshold)."""
    col = X[rows, feature]
    nan = np.isnan(col)
    with np.errstate(invalid="ignore"):
        left = col <= threshold
    return np.where(nan, missing_left, left)
