"""Independent reference computations used to check the learned components.

Nothing here imports the modules it is meant to check: distances come from
scipy, densities from scipy.stats, the final k-means from scipy.cluster, and
the eigensolver is a self-contained Jacobi iteration.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist
from scipy.stats import norm


@dataclass
class DenseEig:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int


def _round_robin(n):
    """Disjoint index pairs for each of the n-1 rounds of a cyclic sweep."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs], dtype=int), np.array([q for _, q in pairs], dtype=int)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def symmetric_eig(a, tol=1e-12, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of one round touch disjoint index pairs and can be
    applied together. Iterates until the off-diagonal Frobenius mass is at
    most ``tol * |a|_F``.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got {a.shape}")
    n = a.shape[0]
    scale = float(np.linalg.norm(a))
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, scale):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    vecs = np.eye(n)
    rounds = _round_robin(n) if n > 1 else []
    target = tol * max(scale, 1e-300)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off <= target:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            theta = np.where(active, (a[q, q] - a[p, p]) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            with np.errstate(over="ignore"):
                t = np.where(active, np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            t = np.where(active & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cols_p, cols_q = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cols_p - s * cols_q
            a[:, q] = s * cols_p + c * cols_q
            rows_p, rows_q = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rows_p - s[:, None] * rows_q
            a[q, :] = s[:, None] * rows_p + c[:, None] * rows_q
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
            vecs[:, p] = c * vp - s * vq
            vecs[:, q] = s * vp + c * vq
    order = np.argsort(np.diag(a), kind="stable")
    return DenseEig(np.diag(a)[order].copy(), vecs[:, order], sweeps)


def knn_affinity(points, k, sigma=None):
    """Reference Gaussian k-NN graph (median k-NN distance bandwidth by default)."""
    d = cdist(points, points)
    np.fill_diagonal(d, np.inf)
    m = len(points)
    keep = np.zeros((m, m), dtype=bool)
    knn_d = []
    for i in range(m):
        nearest = np.argsort(d[i], kind="stable")[:k]
        keep[i, nearest] = True
        knn_d.extend(d[i, nearest])
    keep = keep | keep.T
    if sigma is None:
        sigma = float(np.median(knn_d))
    sigma = max(sigma, 1e-8)
    w = np.zeros((m, m))
    w[keep] = np.exp(-(d[keep] ** 2) / (2.0 * sigma ** 2))
    return w


def laplacian_embedding(W, K):
    """Rows of the K lowest eigenvectors of I - D^-1/2 W D^-1/2, row-normalized."""
    W = np.asarray(W, dtype=np.float64)
    degree = W.sum(1)
    if np.any(degree <= 0):
        warnings.warn("graph has isolated vertices; flooring their degree at 1e-12", RuntimeWarning)
        degree = np.maximum(degree, 1e-12)
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(len(W)) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    eig = symmetric_eig(lap)
    u = eig.eigenvectors[:, :K]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    return u / np.maximum(norms, 1e-12), eig


def exact_spectral_clustering(W, K, seed=0, restarts=10):
    """Normalized-Laplacian spectral clustering with a dense eigensolver."""
    u, _ = laplacian_embedding(W, K)
    gen = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers, labels = kmeans2(u, K, minit="++", seed=gen)
        inertia = float(((u - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return np.asarray(best_labels)


def laplacian_loss_floor(W, K):
    """Smallest (1/m^2) sum W_ij |y_i - y_j|^2 over Y with (1/m) Y^T Y = I.

    Equals (2/m) times the sum of the K smallest eigenvalues of D - W.
    """
    W = np.asarray(W, dtype=np.float64)
    lap = np.diag(W.sum(1)) - W
    values = symmetric_eig(lap).eigenvalues
    return 2.0 / len(W) * float(values[:K].sum())


def finite_diff_grad(f, x, step=1e-4):
    """Central differences of scalar ``f`` at array ``x`` (perturbed in place, restored)."""
    x = np.asarray(x)
    grad = np.zeros(x.shape)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(x))
        flat[i] = orig - step
        down = float(f(x))
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def monte_carlo_kl(mu, log_var, n_samples=100_000, seed=0):
    """Sampled batch-mean KL(N(mu, exp(log_var)) || N(0, I)); returns (estimate, standard error)."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    log_var = np.atleast_2d(np.asarray(log_var, dtype=np.float64))
    if n_samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    gen = np.random.default_rng(seed)
    std = np.exp(0.5 * log_var)
    total = np.zeros(n_samples)
    for row_mu, row_std in zip(mu, std):
        draws = row_mu + row_std * gen.standard_normal((n_samples, row_mu.size))
        log_p = norm.logpdf(draws, loc=row_mu, scale=row_std).sum(1)
        log_q = norm.logpdf(draws).sum(1)
        total += log_p - log_q
    total /= len(mu)
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_samples))


def brute_force_assignment(cost):
    """Exhaustive minimum-cost permutation; returns (assignment, total)."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    best, best_total = None, np.inf
    for perm in itertools.permutations(range(n)):
        total = cost[np.arange(n), perm].sum()
        if total < best_total:
            best, best_total = perm, total
    return np.array(best, dtype=int), float(best_total)


def brute_force_accuracy(labels_true, labels_pred):
    """Accuracy maximized over every cluster-to-label bijection."""
    t = np.asarray(labels_true)
    p = np.asarray(labels_pred)
    k = int(max(t.max(), p.max())) + 1
    best = 0
    for perm in itertools.permutations(range(k)):
        best = max(best, int((np.asarray(perm)[p] == t).sum()))
    return best / len(t)
