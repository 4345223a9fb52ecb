"""Command line entry point: ``deepspec {pretrain,train,eval,embed,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

from . import data as dio
from .config import load_config
from .errors import (
    CheckpointError,
    ConfigurationError,
    DeepSpecError,
    InputError,
    NumericDivergenceError,
    ParseError,
)
from .metrics import REPORT_FIELDS, evaluate
from .pipeline import JOINT_COLUMNS, PRETRAIN_COLUMNS, Trainer

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

SWEEP_FIELDS = ("dataset", "seed", "beta", "gamma", "acc", "nmi", "status")


def load_dataset(config):
    if config.dataset == "blobs":
        return dio.make_blobs(config.n, config.n_clusters, spread=config.blob_spread,
                              seed=config.data_seed, image_size=config.image_size)
    labels = config.labels_path or None
    dataset = dio.load_idx(config.images_path, labels)
    return dataset.subsample(config.n, config.data_seed)


def _evaluation_columns(dataset):
    return ("acc", "nmi") if dataset.labels is not None else ()


def _report(trainer, dataset):
    return evaluate(dataset.labels, trainer.cluster(dataset.images), trainer.config.n_clusters)


def _training_callback(dataset, rows, checkpoint, csv_path, columns):
    def on_epoch(trainer, row):
        row = dict(row)
        if dataset.labels is not None:
            report = _report(trainer, dataset)
            row.update(acc=report.acc, nmi=report.nmi)
        rows.append(row)
        trainer.save(checkpoint)
        dio.export_csv(rows, csv_path, columns)
    return on_epoch


def cmd_pretrain(config, args):
    dataset = load_dataset(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, dataset.images.shape[1:])
    rows = []
    columns = PRETRAIN_COLUMNS + _evaluation_columns(dataset)
    callback = _training_callback(dataset, rows, out / "pretrain.ckpt", out / "pretrain_loss.csv", columns)
    trainer.run_pretrain(dataset.unlabeled(), on_epoch=callback)
    if not rows:
        trainer.save(out / "pretrain.ckpt")
        dio.export_csv([], out / "pretrain_loss.csv", columns)
    print(f"wrote {out / 'pretrain.ckpt'} and {out / 'pretrain_loss.csv'}")
    return EXIT_OK


def cmd_train(config, args):
    if args.checkpoint is None and not args.from_scratch:
        raise ConfigurationError("train needs --checkpoint from pretrain (or --from-scratch)")
    dataset = load_dataset(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint is not None:
        trainer = Trainer.load(args.checkpoint, config)
    else:
        trainer = Trainer(config, dataset.images.shape[1:])
    remaining = config.joint_epochs - (trainer.epoch if trainer.phase == "joint" else 0)
    rows = []
    columns = JOINT_COLUMNS + _evaluation_columns(dataset)
    callback = _training_callback(dataset, rows, out / "train.ckpt", out / "train_metrics.csv", columns)
    trainer.run_joint(dataset.unlabeled(), epochs=max(remaining, 0), on_epoch=callback)
    if not rows:
        trainer.save(out / "train.ckpt")
        dio.export_csv([], out / "train_metrics.csv", columns)
    print(f"wrote {out / 'train.ckpt'} and {out / 'train_metrics.csv'}")
    return EXIT_OK


def _load_for_inference(config, args):
    if args.checkpoint is None:
        raise ConfigurationError("--checkpoint is required")
    trainer = Trainer.load(args.checkpoint, config)
    dataset = load_dataset(config)
    if tuple(dataset.images.shape[1:]) != trainer.input_shape:
        raise InputError(f"dataset images {dataset.images.shape[1:]} do not match "
                         f"checkpoint input {trainer.input_shape}")
    return trainer, dataset


def cmd_eval(config, args):
    trainer, dataset = _load_for_inference(config, args)
    if dataset.labels is None:
        raise InputError("evaluation needs labels; set labels_path")
    report = _report(trainer, dataset)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row = report.row(dataset.name, config.seed, trainer.phase, trainer.epoch)
    dio.export_csv([row], out / "eval.csv", REPORT_FIELDS)
    print(f"acc={report.acc:.4f} nmi={report.nmi:.4f}")
    return EXIT_OK


def cmd_embed(config, args):
    trainer, dataset = _load_for_inference(config, args)
    mu, Y = trainer.embed(dataset.images)
    columns = ["index"] + [f"z{i + 1}" for i in range(mu.shape[1])] + [f"y{i + 1}" for i in range(Y.shape[1])]
    if dataset.labels is not None:
        columns.append("label")
    rows = []
    for i in range(len(mu)):
        row = {"index": i}
        row.update({f"z{j + 1}": float(v) for j, v in enumerate(mu[i])})
        row.update({f"y{j + 1}": float(v) for j, v in enumerate(Y[i])})
        if dataset.labels is not None:
            row["label"] = int(dataset.labels[i])
        rows.append(row)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio.export_csv(rows, out / "embedding.csv", columns)
    print(f"wrote {len(rows)} rows to {out / 'embedding.csv'}")
    return EXIT_OK


def run_sweep(config, dataset):
    """One pretrain + joint run per (beta, gamma) cell; failures are recorded, not raised."""
    rows = []
    for beta in config.sweep_betas:
        for gamma in config.sweep_gammas:
            row = {"dataset": dataset.name, "seed": config.seed, "beta": beta, "gamma": gamma,
                   "acc": "", "nmi": "", "status": "ok"}
            try:
                cell = config.replace(beta=beta, gamma=gamma)
                trainer = Trainer(cell, dataset.images.shape[1:])
                trainer.run_pretrain(dataset.unlabeled())
                trainer.run_joint(dataset.unlabeled())
                if dataset.labels is not None:
                    report = _report(trainer, dataset)
                    row.update(acc=report.acc, nmi=report.nmi)
            except DeepSpecError as exc:
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def cmd_sweep(config, args):
    dataset = load_dataset(config)
    rows = run_sweep(config, dataset)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio.export_csv(rows, out / "sweep.csv", SWEEP_FIELDS)
    print(f"wrote {len(rows)} cells to {out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
            "embed": cmd_embed, "sweep": cmd_sweep}


def build_parser():
    parser = argparse.ArgumentParser(prog="deepspec", description="Deep spectral clustering with a dual autoencoder.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--checkpoint", type=Path, help="checkpoint to start from or evaluate")
        p.add_argument("--from-scratch", action="store_true",
                       help="train: skip the pretrain checkpoint requirement")
    return parser


def _thread_limit():
    value = os.environ.get("DEEPSPEC_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        limit = int(value)
    except ValueError:
        raise ConfigurationError(f"DEEPSPEC_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(limit, 1))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out)
        with _thread_limit():
            return COMMANDS[args.command](config, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, InputError, CheckpointError, OSError, DeepSpecError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
