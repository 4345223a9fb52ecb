"""Seeded Lloyd k-means with k-means++ seeding and multiple restarts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssignmentError


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(points, centers):
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(points, k, gen):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[gen.integers(n)]
    closest = _sq_dists(points, centers[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = gen.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), gen.uniform(0.0, total)))
            idx = min(idx, n - 1)
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centers[j:j + 1]).ravel())
    return centers


def _lloyd(points, centers, max_iter, tol):
    prev = np.inf
    for it in range(1, max_iter + 1):
        d = _sq_dists(points, centers)
        labels = d.argmin(1)
        inertia = float(d[np.arange(len(points)), labels].sum())
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(0)
            else:
                # re-seed an empty cluster at the worst-fit point
                far = int(d[np.arange(len(points)), labels].argmax())
                centers[j] = points[far]
        if prev - inertia <= tol * max(prev, 1e-300) and np.isfinite(prev):
            break
        prev = inertia
    d = _sq_dists(points, centers)
    labels = d.argmin(1)
    return labels, centers, float(d[np.arange(len(points)), labels].sum()), it


def kmeans(points, k, seed=0, restarts=20, max_iter=300, tol=1e-6):
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise AssignmentError(f"cannot form {k} clusters from {n} points")
    best = None
    for r in range(restarts):
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), r])))
        labels, centers, inertia, it = _lloyd(points, _plus_plus(points, k, gen), max_iter, tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, it)
    return best
