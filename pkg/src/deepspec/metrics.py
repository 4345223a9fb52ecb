"""Clustering accuracy under optimal label matching, and normalized mutual information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

REPORT_FIELDS = ("dataset", "seed", "phase", "acc", "nmi", "epoch")


@dataclass
class EvalReport:
    acc: float
    nmi: float
    contingency: np.ndarray
    permutation: dict

    def row(self, dataset, seed, phase, epoch):
        return {"dataset": dataset, "seed": seed, "phase": phase,
                "acc": self.acc, "nmi": self.nmi, "epoch": epoch}


def hungarian(cost):
    """Minimum-cost assignment of rows to columns.

    Returns ``assign`` with ``assign[i]`` the column given to row ``i``.
    Rectangular inputs are zero-padded to square; rows matched to a padding
    column get -1.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InputError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InputError("cost matrix has non-finite entries")
    rows, cols = cost.shape
    n = max(rows, cols)
    if n == 0:
        return np.zeros(0, dtype=int)
    a = np.zeros((n, n))
    a[:rows, :cols] = cost

    # shortest augmenting path with row/column potentials; index 0 is a sentinel
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    assign = np.full(rows, -1, dtype=int)
    for j in range(1, n + 1):
        r = match[j] - 1
        if r < rows and j - 1 < cols:
            assign[r] = j - 1
    return assign


def contingency_table(labels_true, labels_pred, k_true=None, k_pred=None):
    t = np.asarray(labels_true, dtype=int)
    p = np.asarray(labels_pred, dtype=int)
    if t.shape != p.shape or t.ndim != 1:
        raise InputError(f"label arrays differ in shape: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise InputError("empty labelling")
    if t.min() < 0 or p.min() < 0:
        raise InputError("labels must be non-negative")
    k_true = int(t.max()) + 1 if k_true is None else int(k_true)
    k_pred = int(p.max()) + 1 if k_pred is None else int(k_pred)
    if t.max() >= k_true or p.max() >= k_pred:
        raise InputError("label value exceeds the declared number of clusters")
    table = np.zeros((k_true, k_pred), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def accuracy(labels_true, labels_pred, K=None):
    """Best-matching accuracy; returns (acc, {cluster: label})."""
    table = contingency_table(labels_true, labels_pred, K, K)
    assign = hungarian(-table.T.astype(np.float64))  # rows: clusters, cols: labels
    mapping = {c: int(l) for c, l in enumerate(assign) if l >= 0}
    hits = sum(table[l, c] for c, l in mapping.items())
    return hits / table.sum(), mapping


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(labels_true, labels_pred):
    """I(l; c) / max(H(l), H(c)), natural log."""
    table = contingency_table(labels_true, labels_pred).astype(np.float64)
    n = table.sum()
    h_true = _entropy(table.sum(1), n)
    h_pred = _entropy(table.sum(0), n)
    if h_true == 0.0 and h_pred == 0.0:
        return 1.0
    if h_true == 0.0 or h_pred == 0.0:
        return 0.0
    joint = table / n
    outer = np.outer(table.sum(1), table.sum(0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(min(max(mi / max(h_true, h_pred), 0.0), 1.0))


def evaluate(labels_true, labels_pred, K=None):
    acc, mapping = accuracy(labels_true, labels_pred, K)
    table = contingency_table(labels_true, labels_pred, K, K)
    return EvalReport(float(acc), nmi(labels_true, labels_pred), table, mapping)
