"""Dual autoencoder: Gaussian-headed conv encoder, mirrored decoder, latent
noise transformer and the global/local mutual-information discriminators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, InputError
from .tensor import (
    SIGMOID_FLOOR,
    Tensor,
    as_tensor,
    broadcast_to,
    clip,
    concat,
    conv_output_size,
    exp,
    log,
    relu,
    sigmoid,
    square,
    transpose,
    tsum,
)

# (kernel, out_channels) per encoder layer; decoder layers mirror them in reverse
ARCHITECTURES = {
    "mnist": ((3, 16), (3, 16), (3, 32), (3, 32)),
    "fashion": ((3, 16), (3, 16), (3, 32), (3, 32)),
    "usps": ((3, 16), (3, 32)),
    "ytf": ((5, 16), (5, 16), (5, 32), (5, 32)),
    # narrow row for gradient checks and smoke tests
    "micro": ((3, 4), (3, 4), (3, 8), (3, 8)),
}

LOG_VAR_BOUND = 10.0
# initial posterior log-variance; starting with narrow posteriors keeps the
# decoder from learning to ignore the code before the encoder is informative
LOG_VAR_INIT = -3.0
STRIDE = 2


@dataclass
class EncoderOutput:
    mu: Tensor
    log_var: Tensor
    z: Tensor
    feature_map: Tensor
    summary: Tensor
    eps: np.ndarray


class NoisyTransformer:
    """Multiplicative Gaussian perturbation ``z * (1 + noise_std * eps)``."""

    def __init__(self, noise_std=0.5):
        if not noise_std >= 0.0:
            raise ConfigurationError(f"noise_std must be non-negative, got {noise_std}")
        self.noise_std = float(noise_std)

    def __call__(self, z, rng):
        if self.noise_std == 0.0:
            return z
        factor = 1.0 + self.noise_std * rng.normal(z.shape)
        return z * factor


def kl_to_standard_normal(mu, log_var):
    """Batch mean of KL(N(mu, exp(log_var)) || N(0, I))."""
    mu, log_var = as_tensor(mu), as_tensor(log_var)
    per = square(mu) + exp(log_var) - 1.0 - log_var
    return tsum(per) * (0.5 / mu.shape[0])


def js_estimate(positive, negative):
    """Negative-sampling Jensen-Shannon estimate from raw discriminator scores."""
    pos = clip(sigmoid(positive), SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
    neg = clip(sigmoid(negative), SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
    return log(pos).mean() + log(1.0 - neg).mean()


def negative_shift(m, rng):
    """Cyclic shift used to pair each sample with another sample's code."""
    if m < 2:
        raise InputError(f"need at least 2 samples to form negative pairs, got {m}")
    return int(rng.integers(1, m))


def shifted_index(m, shift):
    return (np.arange(m) + shift) % m


def tile_code(z, height, width):
    b, d = z.shape
    return broadcast_to(z.reshape(b, d, 1, 1), (b, d, height, width))


class DualAutoencoder:
    """Parameters and forward passes of the dual autoencoder.

    ``params`` maps names to leaf tensors; prefixes ``enc.``, ``dec.``,
    ``t1.`` and ``t2.`` separate encoder, decoder and the two discriminators.
    """

    def __init__(self, input_shape, rng, architecture="mnist", latent_dim=120,
                 t1_hidden=128, t2_hidden=64):
        if architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {architecture!r}; known: {sorted(ARCHITECTURES)}")
        self.input_shape = tuple(int(v) for v in input_shape)
        self.architecture = architecture
        self.latent_dim = int(latent_dim)
        self.layers = ARCHITECTURES[architecture]
        self.middle = len(self.layers) // 2 - 1 if len(self.layers) > 1 else 0

        c, h, w = self.input_shape
        self.sizes = [(c, h, w)]
        for kernel, channels in self.layers:
            pad = kernel // 2
            h, w = conv_output_size(h, kernel, STRIDE, pad), conv_output_size(w, kernel, STRIDE, pad)
            if h < 1 or w < 1:
                raise ConfigurationError(f"input {self.input_shape} too small for architecture {architecture!r}")
            self.sizes.append((channels, h, w))

        p = {}
        in_c = self.input_shape[0]
        for i, (kernel, channels) in enumerate(self.layers):
            p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"] = nn.conv_params(rng, in_c, channels, kernel)
            in_c = channels
        flat = int(np.prod(self.sizes[-1]))
        d = self.latent_dim
        p["enc.mu.w"], p["enc.mu.b"] = nn.linear_params(rng, flat, d)
        p["enc.logvar.w"], p["enc.logvar.b"] = nn.linear_params(rng, flat, d)
        p["enc.logvar.w"].data *= 0.1
        p["enc.logvar.b"].data[:] = LOG_VAR_INIT

        p["dec.fc.w"], p["dec.fc.b"] = nn.linear_params(rng, d, flat)
        for i, (kernel, channels) in enumerate(self.layers):
            # same layout as the mirrored conv kernel: (out of conv, in of conv, k, k)
            in_ch = self.sizes[i][0]
            weight, _ = nn.conv_params(rng, in_ch, channels, kernel)
            weight.data *= math.sqrt(in_ch / channels)
            p[f"dec.deconv{i}.w"] = weight
            p[f"dec.deconv{i}.b"] = nn.zeros((in_ch,))

        top = self.sizes[-1][0]
        p["t1.fc1.w"], p["t1.fc1.b"] = nn.linear_params(rng, top + d, t1_hidden)
        p["t1.fc2.w"], p["t1.fc2.b"] = nn.linear_params(rng, t1_hidden, 1)
        mid = self.sizes[self.middle + 1][0]
        p["t2.conv1.w"], p["t2.conv1.b"] = nn.linear_params(rng, mid + d, t2_hidden)
        p["t2.conv2.w"], p["t2.conv2.b"] = nn.linear_params(rng, t2_hidden, 1)
        self.params = p

    def group(self, prefix):
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def encode(self, x, rng):
        x = as_tensor(x)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ConfigurationError(f"expected images of shape (*, {self.input_shape}), got {x.shape}")
        p = self.params
        h = x
        feature_map = None
        for i, (kernel, _) in enumerate(self.layers):
            h = relu(nn.conv(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], STRIDE, kernel // 2))
            if i == self.middle:
                feature_map = h
        b = x.shape[0]
        summary = h.mean(axis=(2, 3))
        flat = h.reshape(b, -1)
        mu = nn.linear(flat, p["enc.mu.w"], p["enc.mu.b"])
        log_var = clip(nn.linear(flat, p["enc.logvar.w"], p["enc.logvar.b"]), -LOG_VAR_BOUND, LOG_VAR_BOUND)
        eps = rng.normal((b, self.latent_dim))
        z = mu + exp(log_var * 0.5) * eps
        return EncoderOutput(mu, log_var, z, feature_map, summary, eps)

    def decode(self, z):
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ConfigurationError(f"expected codes of shape (*, {self.latent_dim}), got {z.shape}")
        p = self.params
        b = z.shape[0]
        h = relu(nn.linear(z, p["dec.fc.w"], p["dec.fc.b"])).reshape((b,) + self.sizes[-1])
        for i in reversed(range(len(self.layers))):
            kernel = self.layers[i][0]
            pad = kernel // 2
            target = self.sizes[i][1]
            extra = target - ((h.shape[2] - 1) * STRIDE - 2 * pad + kernel)
            h = nn.deconv(h, p[f"dec.deconv{i}.w"], p[f"dec.deconv{i}.b"], STRIDE, pad, extra)
            h = sigmoid(h) if i == 0 else relu(h)
        return h

    def reconstruction_terms(self, x, z, z_hat, relative=True):
        """Batch means of the relative term ``|x~(z^) - x~(z)|^2`` and the
        original term ``|x - x~(z)|^2``; the relative one is None when off."""
        x = as_tensor(x)
        b = x.shape[0]
        recon = self.decode(z)
        original = tsum(square(x - recon)) * (1.0 / b)
        if not relative:
            return None, original
        noisy = self.decode(z_hat)
        return tsum(square(noisy - recon)) * (1.0 / b), original

    def reconstruction_loss(self, x, z, z_hat, delta=0.5, relative=True):
        if delta < 0:
            raise ConfigurationError(f"delta must be non-negative, got {delta}")
        rel, orig = self.reconstruction_terms(x, z, z_hat, relative)
        return orig * delta if rel is None else rel + orig * delta

    def global_mi_scores(self, summary, z, shift):
        """Raw T1 scores for positive pairs (x_i, z_i) and negatives (x_i, z_{i+shift})."""
        p = self.params
        neg_z = z[shifted_index(z.shape[0], shift)]

        def score(codes):
            hidden = relu(nn.linear(concat([summary, codes], axis=1), p["t1.fc1.w"], p["t1.fc1.b"]))
            return nn.linear(hidden, p["t1.fc2.w"], p["t1.fc2.b"]).reshape(-1)

        return score(z), score(neg_z)

    def local_mi_scores(self, feature_map, z, shift):
        """Per-location T2 scores, shape (batch, h*w), for positives and negatives."""
        p = self.params
        b, c, h, w = feature_map.shape
        neg_z = z[shifted_index(b, shift)]

        def score(codes):
            joined = concat([feature_map, tile_code(codes, h, w)], axis=1)
            rows = transpose(joined, (0, 2, 3, 1)).reshape(b * h * w, c + self.latent_dim)
            hidden = relu(nn.linear(rows, p["t2.conv1.w"], p["t2.conv1.b"]))
            return nn.linear(hidden, p["t2.conv2.w"], p["t2.conv2.b"]).reshape(b, h * w)

        return score(z), score(neg_z)

    def encoder_terms(self, out, beta, gamma, shift):
        """Weighted pieces of the encoder objective: global MI, local MI, KL."""
        if beta < 0 or gamma < 0:
            raise ConfigurationError("beta and gamma must be non-negative")
        terms = {}
        if beta > 0:
            pos, neg = self.global_mi_scores(out.summary, out.z, shift)
            terms["mi_global"] = js_estimate(pos, neg) * (-beta)
            pos, neg = self.local_mi_scores(out.feature_map, out.z, shift)
            terms["mi_local"] = js_estimate(pos, neg) * (-beta)
        else:
            terms["mi_global"] = Tensor(0.0)
            terms["mi_local"] = Tensor(0.0)
        terms["kl"] = kl_to_standard_normal(out.mu, out.log_var) * gamma
        return terms

    def encoder_loss(self, out, beta=0.01, gamma=1.0, shift=1):
        t = self.encoder_terms(out, beta, gamma, shift)
        return t["mi_global"] + t["mi_local"] + t["kl"]
