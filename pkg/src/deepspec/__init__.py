"""Deep spectral clustering on the latent space of a dual autoencoder."""

from .config import Config, load_config, parse_config
from .data import Dataset, ImageSet, load_idx, make_blobs, make_rings
from .metrics import accuracy, evaluate, nmi
from .pipeline import Trainer, run_ablation, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Config", "Dataset", "ImageSet", "Trainer", "accuracy", "evaluate", "load_config",
    "load_idx", "make_blobs", "make_rings", "nmi", "parse_config", "run_ablation", "run_pipeline",
]
