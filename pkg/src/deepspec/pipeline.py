"""Two-phase training: pretrain the dual autoencoder, then train it jointly
with the spectral clustering head; plus evaluation-time embedding."""

from __future__ import annotations

import math

import numpy as np

from . import data as dio
from .autoencoder import DualAutoencoder, NoisyTransformer, negative_shift
from .config import Config, parse_config
from .errors import CheckpointError, ConfigurationError, NumericDivergenceError
from .kmeans import kmeans
from .metrics import contingency_table, hungarian
from .optim import Adam
from .spectral import (
    ClusterHead,
    assign_clusters,
    build_affinity,
    cluster_prior_kl,
    orthogonalization_factor,
    orthogonalize,
    spectral_loss,
    update_cluster_means,
)
from .tensor import Rng, forward_substitute, softmax

PHASES = ("pretrain", "joint")

PRETRAIN_COLUMNS = ("epoch", "total", "L_r", "L_e", "recon_relative", "recon_original",
                    "mi_global", "mi_local", "kl")
JOINT_COLUMNS = ("epoch", "total", "L_r", "L_e", "recon_relative", "recon_original",
                 "mi_global", "mi_local", "prior_kl", "spectral")

# batch orders of the joint phase are drawn from a separate range of epoch keys
_JOINT_EPOCH_KEY = 100_000


def _value(t):
    return float(t.data) if t is not None else 0.0


class Trainer:
    """Holds every trainable piece and the random stream of one run.

    Training methods take label-free :class:`~deepspec.data.ImageSet` views
    or raw image arrays; labels only ever enter through the ``evaluate``
    callback supplied by the caller.
    """

    def __init__(self, config: Config, input_shape):
        self.config = config
        self.input_shape = tuple(int(v) for v in input_shape)
        root = Rng(config.seed)
        init = root.spawn(1)
        self.model = DualAutoencoder(self.input_shape, init, config.architecture, config.latent_dim)
        self.head = ClusterHead(config.latent_dim, config.n_clusters, root.spawn(2))
        self.noise = root.spawn(3)
        self.transformer = NoisyTransformer(config.noise_std)
        self.phase = "pretrain"
        self.epoch = 0
        self.optimizer = self._make_optimizer()

    # -- optimisation --------------------------------------------------------

    def _make_optimizer(self):
        c = self.config
        if self.phase == "pretrain":
            params, lr = dict(self.model.params), c.lr_pretrain
        else:
            params, lr = dict(self.model.params), c.lr_joint
            if not c.freeze_head:
                params.update(self.head.params)
        return Adam(params, lr=lr, betas=(c.adam_beta1, c.adam_beta2), eps=c.adam_eps)

    def _autoencoder_terms(self, x, kl_weight):
        c = self.config
        out = self.model.encode(x, self.noise)
        z_hat = self.transformer(out.z, self.noise)
        shift = negative_shift(out.z.shape[0], self.noise)
        rel, orig = self.model.reconstruction_terms(x, out.z, z_hat, c.relative_recon)
        enc = self.model.encoder_terms(out, c.beta, kl_weight, shift)
        l_r = orig * c.delta if rel is None else rel + orig * c.delta
        return out, l_r, rel, orig, enc

    def _check_finite(self, name, values):
        if not np.all(np.isfinite(values)):
            raise NumericDivergenceError(f"non-finite {name} in {self.phase} epoch {self.epoch}")

    def _apply(self, total):
        value = float(total.data)
        if not math.isfinite(value):
            raise NumericDivergenceError(f"non-finite loss {value} in {self.phase} epoch {self.epoch}")
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()

    def pretrain_step(self, x):
        """One update on L_r + L_e; returns the loss components as floats."""
        c = self.config
        out, l_r, rel, orig, enc = self._autoencoder_terms(x, c.gamma)
        l_e = enc["mi_global"] + enc["mi_local"] + enc["kl"]
        total = l_r + l_e
        row = {"total": _value(total), "L_r": _value(l_r), "L_e": _value(l_e),
               "recon_relative": _value(rel), "recon_original": _value(orig) * c.delta,
               "mi_global": _value(enc["mi_global"]), "mi_local": _value(enc["mi_local"]),
               "kl": _value(enc["kl"])}
        self._apply(total)
        return row

    def joint_step(self, x):
        """One update on L_r + MI terms + cluster-prior KL + spectral loss."""
        c = self.config
        if self.head.mu_y is None:
            raise ConfigurationError("joint phase not initialised; call start_joint first")
        out, l_r, rel, orig, enc = self._autoencoder_terms(x, 0.0)
        self._check_finite("latent codes", out.mu.data)
        graph = build_affinity(out.mu.data, c.k_nn)
        y_tilde = self.head.pre_output(out.mu)
        self._check_finite("head outputs", y_tilde.data)
        factor = orthogonalization_factor(y_tilde.data)
        self.head.ortho_factor = factor
        Y = orthogonalize(y_tilde, factor)
        l_c = spectral_loss(graph.W, Y) * c.spectral_weight
        prior = cluster_prior_kl(out, softmax(Y, axis=1), self.head.mu_y, c.gamma)
        l_e = enc["mi_global"] + enc["mi_local"] + prior
        total = l_r + l_e + l_c
        row = {"total": _value(total), "L_r": _value(l_r), "L_e": _value(l_e),
               "recon_relative": _value(rel), "recon_original": _value(orig) * c.delta,
               "mi_global": _value(enc["mi_global"]), "mi_local": _value(enc["mi_local"]),
               "prior_kl": _value(prior), "spectral": _value(l_c)}
        self._apply(total)
        return row

    def _epoch(self, images, step, key):
        c = self.config
        rows = [step(images[idx]) for idx in dio.batches(len(images), c.batch_size, c.seed, key)]
        return {name: float(np.mean([r[name] for r in rows])) for name in rows[0]}

    def run_pretrain(self, data, epochs=None, on_epoch=None):
        """Pretrain for ``epochs`` more epochs; returns one loss row per epoch."""
        if self.phase != "pretrain":
            raise ConfigurationError("model has already entered the joint phase")
        images = _images(data)
        epochs = self.config.pretrain_epochs if epochs is None else epochs
        history = []
        for _ in range(epochs):
            row = {"epoch": self.epoch + 1, **self._epoch(images, self.pretrain_step, self.epoch)}
            self.epoch += 1
            history.append(row)
            if on_epoch is not None:
                on_epoch(self, row)
        return history

    def start_joint(self, data):
        """Switch to the joint phase: fresh optimizer, cluster means from k-means.

        The k-means clusters of the latent means are matched to the head's
        current arg-max assignment so that column k of the soft assignment and
        ``mu_y[k]`` describe the same group.
        """
        c = self.config
        images = _images(data)
        self.phase = "joint"
        self.epoch = 0
        self.optimizer = self._make_optimizer()
        mu = self.encode_means(images)
        result = kmeans(mu, c.n_clusters, seed=c.seed, restarts=c.kmeans_restarts)
        columns = self.spectral_embedding(mu).argmax(1)
        table = contingency_table(result.labels, columns, c.n_clusters, c.n_clusters)
        target = hungarian(-table.astype(np.float64))
        self.head.mu_y = result.centers[np.argsort(target)]
        self.rebalance_head(mu)

    def refresh_cluster_means(self, images):
        mu = self.encode_means(images)
        labels = self.spectral_embedding(mu).argmax(1)
        self.head.mu_y = update_cluster_means(mu, labels, self.config.n_clusters, self.head.mu_y)
        self.rebalance_head(mu)

    def rebalance_head(self, mu):
        """Fold the reference orthogonalization factor into the head's last layer.

        Right-multiplying Y~ by the inverse transpose of a lower-triangular
        factor leaves every batch's orthonormal output unchanged (Cholesky
        factors are unique), but it resets the raw outputs to unit scale.
        Holding the factor constant under differentiation otherwise lets the
        columns of Y~ drift toward collinearity over many steps. The Adam
        moments of the folded layer no longer match its coordinates and are
        cleared. A frozen head is left untouched.
        """
        if self.config.freeze_head:
            return
        factor = self._reference_factor(mu)
        last = self.head.n_layers - 1
        for name in (f"head.fc{last}.w", f"head.fc{last}.b"):
            param = self.head.params[name]
            folded = forward_substitute(factor, np.atleast_2d(param.data).T).T
            param.data = folded.reshape(param.data.shape)
            if name in self.optimizer.m:
                self.optimizer.m[name][...] = 0.0
                self.optimizer.v[name][...] = 0.0

    def run_joint(self, data, epochs=None, on_epoch=None):
        images = _images(data)
        if self.phase != "joint":
            self.start_joint(images)
        epochs = self.config.joint_epochs if epochs is None else epochs
        history = []
        for _ in range(epochs):
            key = _JOINT_EPOCH_KEY + self.epoch
            row = {"epoch": self.epoch + 1, **self._epoch(images, self.joint_step, key)}
            self.epoch += 1
            self.refresh_cluster_means(images)
            history.append(row)
            if on_epoch is not None:
                on_epoch(self, row)
        return history

    # -- inference -----------------------------------------------------------

    def encode_means(self, images, chunk=256):
        """Latent means of every image, in input order."""
        images = _images(images)
        probe = Rng(0)
        parts = [self.model.encode(images[i:i + chunk], probe).mu.data for i in range(0, len(images), chunk)]
        return np.concatenate(parts, axis=0)

    def _reference_factor(self, mu):
        c = self.config
        rows = min(c.eval_reference_rows, len(mu))
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([c.seed, 0xEEF])))
        ref = np.sort(gen.choice(len(mu), size=rows, replace=False))
        return orthogonalization_factor(self.head.pre_output(mu[ref]).data)

    def spectral_embedding(self, mu, chunk=512):
        """Rows of Y for codes ``mu`` with one factor fixed from a reference batch."""
        factor = self._reference_factor(mu)
        parts = [orthogonalize(self.head.pre_output(mu[i:i + chunk]), factor).data
                 for i in range(0, len(mu), chunk)]
        return np.concatenate(parts, axis=0)

    def uses_spectral_readout(self):
        c = self.config
        return self.phase == "joint" and not (c.freeze_head and c.spectral_weight == 0)

    def embed(self, images):
        mu = self.encode_means(images)
        return mu, self.spectral_embedding(mu)

    def cluster(self, images):
        """Cluster labels: k-means on Y after the joint phase, on the latent means before."""
        c = self.config
        mu = self.encode_means(images)
        if self.uses_spectral_readout():
            Y = self.spectral_embedding(mu)
            return assign_clusters(Y, c.n_clusters, seed=c.seed, restarts=c.kmeans_restarts).labels
        return kmeans(mu, c.n_clusters, seed=c.seed, restarts=c.kmeans_restarts).labels

    # -- persistence ---------------------------------------------------------

    def state_arrays(self):
        out = {f"param/{k}": v.data for k, v in self.model.params.items()}
        out.update({f"param/{k}": v.data for k, v in self.head.params.items()})
        out.update(self.optimizer.state_arrays("opt"))
        out["rng/noise"] = self.noise.get_state()
        out["meta/epoch"] = np.array([float(self.epoch)])
        out["meta/phase"] = np.array([float(PHASES.index(self.phase))])
        out["meta/input_shape"] = np.array(self.input_shape, dtype=np.float64)
        out["meta/config"] = dio.text_to_array(self.config.to_text())
        if self.head.mu_y is not None:
            out["head/mu_y"] = self.head.mu_y
        return out

    def save(self, path):
        dio.save_checkpoint(path, self.state_arrays())

    @classmethod
    def from_arrays(cls, arrays, config=None):
        try:
            stored = parse_config(dio.array_to_text(arrays["meta/config"]))
            shape = tuple(int(v) for v in arrays["meta/input_shape"])
            phase = PHASES[int(arrays["meta/phase"][0])]
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks {exc}") from None
        config = stored if config is None else config
        for key in ("architecture", "latent_dim", "n_clusters"):
            if getattr(config, key) != getattr(stored, key):
                raise CheckpointError(f"checkpoint {key}={getattr(stored, key)!r} "
                                      f"does not match config {getattr(config, key)!r}")
        trainer = cls(config, shape)
        for params in (trainer.model.params, trainer.head.params):
            for name, tensor in params.items():
                key = f"param/{name}"
                if key not in arrays or arrays[key].shape != tensor.shape:
                    raise CheckpointError(f"checkpoint parameter {name} missing or mis-shaped")
                tensor.data = np.array(arrays[key])
        trainer.phase = phase
        trainer.epoch = int(arrays["meta/epoch"][0])
        trainer.head.mu_y = np.array(arrays["head/mu_y"]) if "head/mu_y" in arrays else None
        trainer.optimizer = trainer._make_optimizer()
        saved = {k[len("opt/m/"):] for k in arrays if k.startswith("opt/m/")}
        if saved == set(trainer.optimizer.params):
            trainer.optimizer.load_state_arrays(arrays, "opt")
        if "rng/noise" in arrays:
            trainer.noise.set_state(arrays["rng/noise"])
        return trainer

    @classmethod
    def load(cls, path, config=None):
        return cls.from_arrays(dio.load_checkpoint(path), config)


def _images(data):
    return data.images if hasattr(data, "images") else np.asarray(data)


# ---------------------------------------------------------------------------
# whole runs
# ---------------------------------------------------------------------------

# autoencoder variants: (mutual information on?, relative reconstruction on?)
ABLATIONS = {
    "ConvAE": {"beta": 0.0, "relative_recon": False},
    "ConvAE+MI": {"relative_recon": False},
    "ConvAE+RS": {"beta": 0.0},
    "ConvAE+MI+RS": {},
}


def run_pipeline(config, images, on_epoch=None):
    """Pretrain then joint-train on a label-free image array.

    Returns (trainer, pretrain_history, joint_history, pretrain_labels) where
    ``pretrain_labels`` is the k-means read-out taken between the phases.
    """
    trainer = Trainer(config, images.shape[1:])
    pre = trainer.run_pretrain(images, on_epoch=on_epoch)
    pretrain_labels = trainer.cluster(images)
    joint = trainer.run_joint(images, on_epoch=on_epoch)
    return trainer, pre, joint, pretrain_labels


def run_ablation(config, images):
    """Cluster labels of each autoencoder variant plus the full two-phase model."""
    labels = {}
    full = None
    for name, changes in ABLATIONS.items():
        trainer = Trainer(config.replace(**changes), images.shape[1:])
        trainer.run_pretrain(images)
        labels[name] = trainer.cluster(images)
        full = trainer
    full.run_joint(images)
    labels["full"] = full.cluster(images)
    return labels
