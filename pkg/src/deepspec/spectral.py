"""Deep spectral clustering head.

Codes are linked by a Gaussian k-NN affinity graph; a four-layer network maps
codes to K outputs which a final orthogonalization layer whitens per batch,
and the affinity-weighted spread of the outputs is the spectral loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import GraphError, NotPositiveDefiniteError, RankDeficiencyError
from .kmeans import kmeans
from .tensor import (
    Rng,
    Tensor,
    as_tensor,
    cholesky_factor,
    exp,
    forward_substitute,
    relu,
    square,
    transpose,
    triangular_solve,
    tsum,
)

ORTHO_EPS = 1e-9
SIGMA_FLOOR = 1e-8
ORTHO_TOL = 1e-6


@dataclass
class AffinityGraph:
    W: np.ndarray
    sigma: float
    k: int


@dataclass
class Assignment:
    labels: np.ndarray
    Y: np.ndarray


def build_affinity(z, k=3, sigma_mode="median"):
    """Symmetric Gaussian k-NN affinity over the rows of ``z``.

    An edge (i, j) is kept when j is among i's k nearest codes or vice versa.
    ``sigma_mode`` is ``"median"`` (median retained k-NN distance) or a
    positive number used directly as the kernel bandwidth.
    """
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    m = z.shape[0]
    if m <= k:
        raise GraphError(f"k-NN graph with k={k} needs more than {k} codes, got {m}")
    sq = (z * z).sum(1)
    d2 = np.maximum(sq[:, None] - 2.0 * z @ z.T + sq[None, :], 0.0)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, np.inf)
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(m), k)
    keep = np.zeros((m, m), dtype=bool)
    keep[rows, neighbours.ravel()] = True
    keep |= keep.T

    if sigma_mode == "median":
        sigma = float(np.median(np.sqrt(d2[rows, neighbours.ravel()])))
    else:
        sigma = float(sigma_mode)
    sigma = max(sigma, SIGMA_FLOOR)
    d2[~keep] = 0.0
    W = np.where(keep, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
    np.fill_diagonal(W, 0.0)
    return AffinityGraph(W, sigma, k)


class ClusterHead:
    """Four fully connected layers d -> 256 -> 128 -> 64 -> K plus the
    orthogonalization factor of the last batch and the cluster means."""

    def __init__(self, latent_dim, n_clusters, rng, hidden=(256, 128, 64)):
        self.latent_dim = int(latent_dim)
        self.n_clusters = int(n_clusters)
        widths = (self.latent_dim, *hidden, self.n_clusters)
        self.params = {}
        for i in range(len(widths) - 1):
            w, b = nn.linear_params(rng, widths[i], widths[i + 1])
            self.params[f"head.fc{i}.w"], self.params[f"head.fc{i}.b"] = w, b
        self.n_layers = len(widths) - 1
        self.ortho_factor = None
        self.mu_y = None

    def pre_output(self, z):
        h = as_tensor(z)
        for i in range(self.n_layers):
            h = nn.linear(h, self.params[f"head.fc{i}.w"], self.params[f"head.fc{i}.b"])
            if i < self.n_layers - 1:
                h = relu(h)
        return h


def orthogonalization_factor(y_tilde, eps=ORTHO_EPS):
    """Lower-triangular B such that Y~ (B^-1)^T has (1/m) Y^T Y = I.

    The first pass factors Y~^T Y~ / m + eps I. On nearly singular batches the
    eps shift alone leaves an error of eps * |G^-1|, so a second pass factors
    the Gram matrix of the once-whitened rows and the two factors are composed.
    """
    y_tilde = np.asarray(y_tilde, dtype=np.float64)
    m, k = y_tilde.shape
    if m < k:
        raise RankDeficiencyError(f"batch of {m} rows cannot be orthonormal in {k} columns")
    try:
        first = cholesky_factor(y_tilde.T @ y_tilde / m + eps * np.eye(k))
        once = forward_substitute(first, y_tilde.T)
        second = cholesky_factor(once @ once.T / m)
    except NotPositiveDefiniteError as exc:
        raise RankDeficiencyError(
            f"network outputs are rank deficient (pivot {exc.index}); use a larger batch"
        ) from exc
    factor = first @ second
    # the eps shift lets exactly singular batches factor; catch them here
    y = forward_substitute(factor, y_tilde.T)
    error = np.linalg.norm(y @ y.T / m - np.eye(k))
    if not error <= ORTHO_TOL:
        raise RankDeficiencyError(
            f"network outputs are rank deficient (orthonormality error {error:.2e}); use a larger batch"
        )
    return factor


def orthogonalize(y_tilde, factor):
    """Y = Y~ (B^-1)^T by triangular solves; B is a constant of the graph."""
    return transpose(triangular_solve(factor, transpose(as_tensor(y_tilde))))


def forward_orthogonalized(z_batch, head, factor=None, eps=ORTHO_EPS):
    """Orthonormal spectral embedding of a batch: (1/m) Y^T Y = I.

    A fresh factor is computed from this batch unless ``factor`` is given; the
    factor used is stored on ``head.ortho_factor``.
    """
    y_tilde = head.pre_output(z_batch)
    if factor is None:
        factor = orthogonalization_factor(y_tilde.data, eps)
    head.ortho_factor = factor
    return orthogonalize(y_tilde, factor)


def spectral_loss(W, Y):
    """(1/m^2) sum_ij W_ij |y_i - y_j|^2."""
    W = np.asarray(W.data if isinstance(W, Tensor) else W, dtype=np.float64)
    Y = as_tensor(Y)
    m, k = Y.shape
    if W.shape != (m, m):
        raise GraphError(f"affinity shape {W.shape} does not match {m} embedding rows")
    diff = Y.reshape(m, 1, k) - Y.reshape(1, m, k)
    return tsum(tsum(square(diff), axis=2) * W) * (1.0 / (m * m))


def cluster_prior_kl(out, y_soft, mu_y, gamma=1.0):
    """gamma * E_i sum_k p(k|z_i) KL(N(mu_i, diag var_i) || N(mu_y[k], I))."""
    mu, log_var = out.mu, out.log_var
    y_soft = as_tensor(y_soft)
    mu_y = np.asarray(mu_y, dtype=np.float64)
    b, d = mu.shape
    k = mu_y.shape[0]
    base = tsum(exp(log_var) - 1.0 - log_var, axis=1).reshape(b, 1)
    dist = tsum(square(mu.reshape(b, 1, d) - mu_y.reshape(1, k, d)), axis=2)
    per = (base + dist) * 0.5
    return tsum(y_soft * per) * (gamma / b)


def assign_clusters(Y, K, seed=0, restarts=20, max_iter=300, tol=1e-6):
    Y = np.asarray(Y.data if isinstance(Y, Tensor) else Y, dtype=np.float64)
    result = kmeans(Y, K, seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)
    return Assignment(result.labels, Y)


def update_cluster_means(z, labels, n_clusters, previous=None):
    """Per-cluster mean of ``z``; empty clusters keep their previous mean."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    labels = np.asarray(labels)
    means = np.zeros((n_clusters, z.shape[1])) if previous is None else np.array(previous, dtype=np.float64)
    for k in range(n_clusters):
        members = labels == k
        if members.any():
            means[k] = z[members].mean(0)
    return means


def fit_full_batch(z, W, K, steps=1000, lr=3.0, seed=0):
    """Train a fresh head on all of ``z`` at once by plain gradient descent.

    The factor is refreshed before every step and held fixed for the gradient.
    Under that rule the outputs slowly drift toward collinear columns, so the
    step budget matters: the defaults sit well inside the stable window on
    graphs of a few dozen nodes. Adam is deliberately avoided here because its
    per-coordinate scaling amplifies the drift.
    """
    z = np.asarray(z, dtype=np.float64)
    head = ClusterHead(z.shape[1], K, Rng(seed))
    params = list(head.params.values())
    for _ in range(steps):
        loss = spectral_loss(W, forward_orthogonalized(z, head))
        for p in params:
            p.zero_grad()
        loss.backward()
        for p in params:
            p.data = p.data - lr * p.grad
    return head
