"""Run configuration: a flat ``key = value`` file with ``#`` comments.

Every key, with its default:

    dataset            blobs | idx           (blobs: synthetic square images)
    images_path        IDX image file        (idx only)
    labels_path        IDX label file        (idx only, optional)
    n                  2000                  samples (idx: random subsample)
    n_clusters         4                     K
    image_size         16                    blobs image side
    blob_spread        1.0                   blobs positional jitter in pixels
    data_seed          0                     seed for generating/subsampling data
    architecture       mnist                 mnist | fashion | usps | ytf | micro
    latent_dim         120                   d
    batch_size         128                   m
    beta               0.01                  mutual-information weight
    gamma              1.0                   KL weight
    delta              0.5                   original-reconstruction weight
    noise_std          0.5                   multiplicative latent noise
    relative_recon     true                  include the noisy-vs-clean decoder term
    k_nn               3                     affinity neighbours
    spectral_weight    1.0                   weight of the spectral loss in the joint phase
    freeze_head        false                 keep the clustering head fixed in the joint phase
    lr_pretrain        0.001
    lr_joint           0.0001
    adam_beta1         0.9
    adam_beta2         0.999
    adam_eps           1e-8
    pretrain_epochs    20
    joint_epochs       30
    kmeans_restarts    20
    eval_reference_rows 1024                 rows used to fix the eval-time orthogonalization
    seed               0
    out_dir            runs
    sweep_betas        0.001, 0.01, 0.1
    sweep_gammas       0.1, 1.0, 10.0
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class Config:
    dataset: str = "blobs"
    images_path: str = ""
    labels_path: str = ""
    n: int = 2000
    n_clusters: int = 4
    image_size: int = 16
    blob_spread: float = 1.0
    data_seed: int = 0
    architecture: str = "mnist"
    latent_dim: int = 120
    batch_size: int = 128
    beta: float = 0.01
    gamma: float = 1.0
    delta: float = 0.5
    noise_std: float = 0.5
    relative_recon: bool = True
    k_nn: int = 3
    spectral_weight: float = 1.0
    freeze_head: bool = False
    lr_pretrain: float = 1e-3
    lr_joint: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    pretrain_epochs: int = 20
    joint_epochs: int = 30
    kmeans_restarts: int = 20
    eval_reference_rows: int = 1024
    seed: int = 0
    out_dir: str = "runs"
    sweep_betas: tuple = (0.001, 0.01, 0.1)
    sweep_gammas: tuple = (0.1, 1.0, 10.0)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dataset not in ("blobs", "idx"):
            raise ConfigurationError(f"dataset must be 'blobs' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx" and not self.images_path:
            raise ConfigurationError("dataset = idx needs images_path")
        for name in ("n", "n_clusters", "latent_dim", "batch_size", "k_nn", "kmeans_restarts",
                     "eval_reference_rows", "image_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("pretrain_epochs", "joint_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        for name in ("beta", "gamma", "delta", "noise_std", "spectral_weight", "lr_pretrain",
                     "lr_joint", "blob_spread"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and non-negative, got {value}")
        if self.batch_size < self.n_clusters:
            raise ConfigurationError("batch_size must be at least n_clusters")
        for name in ("sweep_betas", "sweep_gammas"):
            if not all(math.isfinite(v) for v in getattr(self, name)):
                raise ConfigurationError(f"{name} must hold finite values")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _convert(name, raw, default):
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"cannot parse {name} = {raw!r}") from None


def parse_config(text, **overrides):
    """Build a Config from ``key = value`` text; unknown keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    defaults = Config()
    known = {f.name for f in fields(Config)}
    values = {}
    for key, raw in parser["config"].items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw, getattr(defaults, key))
    for key, value in overrides.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    return Config(**values)


def load_config(path=None, **overrides):
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, **overrides)
