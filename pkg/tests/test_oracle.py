import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepspec import oracle
from deepspec.data import make_blobs, make_rings
from deepspec.metrics import accuracy
from deepspec.spectral import build_affinity


class TestJacobi:
    def test_diagonal_input(self):
        eig = oracle.symmetric_eig(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_array_equal(eig.eigenvalues, [1.0, 2.0, 3.0])

    def test_two_by_two(self):
        eig = oracle.symmetric_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(eig.eigenvalues, [1.0, 3.0], atol=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**31 - 1))
    def test_matches_lapack(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        a = a + a.T
        eig = oracle.symmetric_eig(a)
        np.testing.assert_allclose(eig.eigenvalues, np.linalg.eigvalsh(a), atol=1e-9 * max(1.0, np.abs(a).max()))
        np.testing.assert_allclose(eig.eigenvectors.T @ eig.eigenvectors, np.eye(n), atol=1e-10)
        recon = eig.eigenvectors @ np.diag(eig.eigenvalues) @ eig.eigenvectors.T
        np.testing.assert_allclose(recon, a, atol=1e-9 * max(1.0, np.abs(a).max()))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            oracle.symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestReferenceAffinity:
    def test_agrees_with_library_graph(self):
        points = np.random.default_rng(1).normal(size=(30, 3))
        np.testing.assert_allclose(build_affinity(points, k=4).W, oracle.knn_affinity(points, 4), atol=1e-12)


class TestLossFloor:
    def test_two_components_have_zero_floor(self):
        W = np.zeros((4, 4))
        W[0, 1] = W[1, 0] = W[2, 3] = W[3, 2] = 1.0
        assert oracle.laplacian_loss_floor(W, 2) == pytest.approx(0.0, abs=1e-14)

    def test_path_graph(self):
        W = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        # Laplacian eigenvalues of the 3-path are 0, 1, 3
        assert oracle.laplacian_loss_floor(W, 2) == pytest.approx(2.0 / 3.0 * 1.0)


class TestExactSpectralClustering:
    def test_separated_blobs(self):
        ds = make_blobs(64, 2, dim=2, separation=10.0, spread=1.0, seed=0)
        labels = oracle.exact_spectral_clustering(build_affinity(ds.images, k=3).W, 2)
        assert accuracy(ds.labels, labels)[0] >= 0.95

    def test_rings_beat_plain_kmeans(self):
        ds = make_rings(200, seed=0)
        labels = oracle.exact_spectral_clustering(oracle.knn_affinity(ds.images, 10), 2)
        assert accuracy(ds.labels, labels)[0] >= 0.95


class TestMonteCarloKL:
    def test_zero_at_prior(self):
        estimate, se = oracle.monte_carlo_kl(np.zeros((1, 3)), np.zeros((1, 3)))
        assert estimate == 0.0 and se == 0.0

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            oracle.monte_carlo_kl(np.zeros(2), np.zeros(2), n_samples=100)


def test_finite_differences_of_a_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(oracle.finite_diff_grad(lambda v: float((v ** 2).sum()), x), 2 * x, atol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])


def test_brute_force_assignment_identity():
    assign, total = oracle.brute_force_assignment(np.array([[0.0, 5.0], [5.0, 0.0]]))
    assert assign.tolist() == [0, 1] and total == 0.0
