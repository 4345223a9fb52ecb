"""Shared fixtures: gradient checks on the micro configuration (2 images of
8x8, latent dimension 4, two clusters) and corrupted IDX files."""

import contextlib
import gzip
import struct
from pathlib import Path

import numpy as np

from deepspec import autoencoder, spectral
from deepspec import tensor as T
from deepspec.autoencoder import DualAutoencoder, NoisyTransformer
from deepspec.oracle import finite_diff_grad
from deepspec.spectral import (
    ClusterHead,
    build_affinity,
    cluster_prior_kl,
    orthogonalization_factor,
    orthogonalize,
    spectral_loss,
)
from deepspec.tensor import Rng, softmax

GRAD_FLOOR = 1e-6
GRAD_RTOL = 1e-4
FD_STEP = 1e-5
KINK_MARGIN = 1e-3


@contextlib.contextmanager
def relu_margin_probe():
    """Record the smallest |pre-activation| seen by any ReLU while active."""
    seen = [np.inf]
    original = T.relu

    def probe(x):
        seen[0] = min(seen[0], float(np.abs(T.as_tensor(x).data).min()))
        return original(x)

    autoencoder.relu = spectral.relu = probe
    try:
        yield seen
    finally:
        autoencoder.relu = spectral.relu = original


class MicroSetup:
    def __init__(self, seed=0):
        rng = Rng(seed)
        self.model = DualAutoencoder((1, 8, 8), rng.spawn(1), "micro", latent_dim=4, t1_hidden=16, t2_hidden=8)
        self.head = ClusterHead(4, 2, rng.spawn(2), hidden=(16, 8, 8))
        gen = np.random.default_rng(seed)
        # zero-initialised biases would put dead units exactly on the ReLU kink,
        # where central differences report half the slope
        for name, p in {**self.model.params, **self.head.params}.items():
            if name.endswith(".b"):
                p.data = gen.normal(0.0, 0.1, p.shape)
        self.x = gen.uniform(0.0, 1.0, (2, 1, 8, 8))
        self.noise_seed = seed + 100
        out = self.encode_out()
        # affinity, orthogonalization factor and cluster means are constants of the graph
        self.W = build_affinity(out.mu.data, k=1).W
        self.B = orthogonalization_factor(self.head.pre_output(out.mu).data)
        self.mu_y = gen.normal(size=(2, 4))

    def encode(self):
        rng = Rng(self.noise_seed)
        out = self.model.encode(self.x, rng)
        return out, rng

    def encode_out(self):
        return self.encode()[0]

    def recon_loss(self):
        out, rng = self.encode()
        z_hat = NoisyTransformer(0.5)(out.z, rng)
        return self.model.reconstruction_loss(self.x, out.z, z_hat, delta=0.5)

    def encoder_loss(self):
        out, _ = self.encode()
        return self.model.encoder_loss(out, beta=0.01, gamma=1.0, shift=1)

    def embedding(self, out):
        return orthogonalize(self.head.pre_output(out.mu), self.B)

    def spectral_loss(self):
        out, _ = self.encode()
        return spectral_loss(self.W, self.embedding(out))

    def prior_kl(self):
        out, _ = self.encode()
        return cluster_prior_kl(out, softmax(self.embedding(out), axis=1), self.mu_y, 1.0)

    def kink_margin(self):
        """Distance of the nearest ReLU input to zero over every checked loss."""
        with relu_margin_probe() as seen:
            self.recon_loss()
            self.encoder_loss()
            self.spectral_loss()
        return seen[0]

    def all_params(self):
        return {**self.model.params, **self.head.params}


def gradient_check(setup, loss_fn, prefixes):
    """Largest relative analytic-vs-central-difference error over all checked coordinates.

    Returns (worst relative error, number of coordinates checked, worst name).
    """
    params = {k: v for k, v in setup.all_params().items() if k.startswith(prefixes)}
    for p in setup.all_params().values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {k: p.grad.copy() for k, p in params.items()}
    worst, checked, worst_name = 0.0, 0, None
    for name, p in params.items():
        numeric = finite_diff_grad(lambda _: loss_fn().item(), p.data, step=FD_STEP)
        a = analytic[name].ravel()
        n = numeric.ravel()
        mask = np.maximum(np.abs(a), np.abs(n)) > GRAD_FLOOR
        if mask.any():
            rel = np.abs(a[mask] - n[mask]) / np.maximum(np.abs(a[mask]), np.abs(n[mask]))
            checked += int(mask.sum())
            if rel.max() > worst:
                worst, worst_name = float(rel.max()), name
    return worst, checked, worst_name


def kink_free_setups(count, start=0, limit=50):
    """The first ``count`` seeds whose micro setup keeps every ReLU input at
    least KINK_MARGIN away from zero and has a full-rank head output.

    Central differences are meaningless across the kink, so checks are run
    only where the loss is smooth within the finite-difference step.
    """
    found = []
    for seed in range(start, start + limit):
        try:
            setup = MicroSetup(seed)
        except spectral.RankDeficiencyError:
            continue
        if setup.kink_margin() >= KINK_MARGIN:
            found.append(setup)
            if len(found) == count:
                return found
    raise RuntimeError(f"only {len(found)} kink-free micro setups among {limit} seeds")


LOSSES = {
    "reconstruction": ("recon_loss", ("enc.", "dec.")),
    "encoder": ("encoder_loss", ("enc.", "t1.", "t2.")),
    "spectral": ("spectral_loss", ("enc.", "head.")),
    "cluster_prior_kl": ("prior_kl", ("enc.", "head.")),
}


MNIST_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist"
MNIST_IMAGES = MNIST_DIR / "t10k-images-idx3-ubyte.gz"
MNIST_LABELS = MNIST_DIR / "t10k-labels-idx1-ubyte.gz"


def corrupted_idx_variants(images_raw, labels_raw):
    """Five broken (images, labels) byte pairs and the offset each must be rejected at."""
    count = struct.unpack_from(">I", images_raw, 4)[0]
    cut = max(1, min(100, (len(images_raw) - 16) // 2))
    bigger = bytearray(images_raw)
    struct.pack_into(">I", bigger, 4, count + 1)
    return [
        ("truncated header", images_raw[:10], labels_raw, 8),
        ("bad magic", b"\x00\x00\x08\x04" + images_raw[4:], labels_raw, 0),
        ("truncated payload", images_raw[:-cut], labels_raw, len(images_raw) - cut),
        ("trailing bytes", images_raw + b"\x00\x00\x00", labels_raw, len(images_raw)),
        ("count beyond payload", bytes(bigger), labels_raw, len(images_raw)),
    ]


def write_variant(tmp_path, name, images_raw, labels_raw):
    stem = name.replace(" ", "_")
    images, labels = tmp_path / f"{stem}-images.idx", tmp_path / f"{stem}-labels.idx"
    images.write_bytes(images_raw)
    labels.write_bytes(labels_raw)
    return images, labels


def read_raw(path):
    return gzip.decompress(Path(path).read_bytes())
