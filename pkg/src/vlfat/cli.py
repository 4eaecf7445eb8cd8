"""Experiment driver.

Subcommands: ``gen-data`` (synthesize a dataset), ``train`` (fit a model and
keep the best-validation checkpoint), ``eval`` (score one split at one
length), ``robustness`` (sweep test-time lengths for PE-bearing models).
Every command is deterministic given its config and seed; timestamps go only
to the per-run log file, never into result artifacts.

Exit codes: 0 success, 1 I/O failure, 2 config error, 3 numerical abort,
4 aggregator-mode error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .aggregator import POSITIONAL_MODES
from .config import load_json, parse_run_config
from .data import Manifest, generate_synthetic_dataset, load_split
from .errors import ConfigError, CorruptFileError, TrainingAborted
from .model import VolumeModel, load_checkpoint
from .rng import RngStream
from .training import default_eval_length, evaluate, train


class ModeError(RuntimeError):
    """The checkpoint's aggregator cannot serve this command."""


def _echo_config(out_dir: str, doc: dict) -> None:
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def _run_logger(out_dir: str) -> logging.Logger:
    logger = logging.getLogger(f"vlfat.run.{out_dir}")
    logger.setLevel(logging.INFO)
    for old in logger.handlers:
        old.close()
    logger.handlers.clear()
    handler = logging.FileHandler(os.path.join(out_dir, "run.log"))
    handler.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def cmd_gen_data(args) -> int:
    cfg = parse_run_config(load_json(args.config), "gen-data")
    out_dir = cfg.data.out_dir
    os.makedirs(out_dir, exist_ok=True)
    manifest = generate_synthetic_dataset(cfg.data.task, cfg.data.counts, out_dir, cfg.seed)
    _echo_config(out_dir, cfg.raw)
    print(os.path.join(out_dir, "manifest.json"))
    for split in ("train", "val", "test"):
        entries = manifest.for_split(split)
        if entries:
            print(f"{split}: {len(entries)} volumes")
    return 0


def cmd_train(args) -> int:
    cfg = parse_run_config(load_json(args.config), "train")
    manifest_path = cfg.data.manifest
    manifest = Manifest.load(manifest_path)
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    train_vols = load_split(manifest, base_dir, "train")
    val_vols = load_split(manifest, base_dir, "val")
    os.makedirs(cfg.out_dir, exist_ok=True)
    _echo_config(cfg.out_dir, cfg.raw)
    logger = _run_logger(cfg.out_dir)
    model = VolumeModel(cfg.model, RngStream.for_label(cfg.seed, "init"))
    logger.info(
        "training %s: %d parameters, %d train / %d val volumes",
        cfg.model.aggregator,
        model.num_params(),
        len(train_vols),
        len(val_vols),
    )
    checkpoint_path = os.path.join(cfg.out_dir, "checkpoint.ckpt")
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    result = train(
        model,
        train_vols,
        val_vols,
        cfg.train,
        cfg.seed,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
    )
    summary = {
        "aggregator": cfg.model.aggregator,
        "best_epoch": result.best_epoch,
        "val_bacc": result.best_val_bacc,
        "epochs": cfg.train.epochs,
        "seed": cfg.seed,
        "checkpoint": "checkpoint.ckpt",
        "metrics": "metrics.csv",
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    logger.info("best epoch %d, val bacc %.4f", result.best_epoch, result.best_val_bacc)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_n_slices(text: str):
    if text == "all":
        return "all"
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(f"--n-slices must be an integer or 'all', got {text!r}") from None
    if n < 1:
        raise ConfigError(f"--n-slices must be >= 1, got {n}")
    return n


def _load_for_eval(args):
    model, meta = load_checkpoint(args.checkpoint)
    manifest = Manifest.load(args.manifest)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    volumes = load_split(manifest, base_dir, args.split)
    if not volumes:
        raise ConfigError(f"split {args.split!r} is empty in {args.manifest}")
    seed = args.seed if args.seed is not None else meta.get("seed", 0)
    return model, meta, volumes, seed


def cmd_eval(args) -> int:
    model, meta, volumes, seed = _load_for_eval(args)
    n_slices = _parse_n_slices(args.n_slices)
    ev = evaluate(model, volumes, n_slices, seed)
    report = ev.result.to_dict()
    report.update(
        {
            "loss": ev.loss,
            "split": args.split,
            "n_slices": n_slices,
            "n_mean": ev.n_mean,
            "seed": seed,
            "checkpoint": args.checkpoint,
            "checkpoint_meta": meta,
            "warnings": ev.warnings,
        }
    )
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
    return 0


def cmd_robustness(args) -> int:
    model, meta, volumes, seed = _load_for_eval(args)
    if model.cfg.aggregator not in POSITIONAL_MODES:
        raise ModeError(
            f"robustness sweep requires a PE-bearing aggregator (one of {POSITIONAL_MODES}), "
            f"got {model.cfg.aggregator!r}; sweep pooled modes via repeated eval calls instead"
        )
    try:
        resolutions = sorted({int(r) for r in args.resolutions.split(",") if r.strip()})
    except ValueError:
        raise ConfigError(
            f"--resolutions must be comma-separated integers, got {args.resolutions!r}"
        ) from None
    if not resolutions or resolutions[0] < 1:
        raise ConfigError(f"resolutions must be positive, got {args.resolutions!r}")
    out_path = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)), "robustness.csv"
    )
    lines = ["resolution,bacc,auroc_macro"]
    for r in resolutions:
        ev = evaluate(model, volumes, r, seed)
        lines.append(f"{r},{ev.result.bacc!r},{ev.result.auroc_macro!r}")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))
        f.write("\n")
    print(out_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlfat",
        description="Variable-length volume classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="synthesize a dataset from a config")
    gen.add_argument("--config", required=True)
    gen.set_defaults(fn=cmd_gen_data)

    tr = sub.add_parser("train", help="train a model from a config")
    tr.add_argument("--config", required=True)
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--split", required=True, choices=("train", "val", "test"))
    ev.add_argument("--n-slices", required=True, help="an integer or 'all'")
    ev.add_argument("--seed", type=int, default=None, help="defaults to the checkpoint's seed")
    ev.add_argument("--out", default=None, help="also write the report JSON here")
    ev.set_defaults(fn=cmd_eval)

    rb = sub.add_parser("robustness", help="sweep test-time lengths (fat/vlfat only)")
    rb.add_argument("--checkpoint", required=True)
    rb.add_argument("--manifest", required=True)
    rb.add_argument("--resolutions", required=True, help="comma-separated lengths, e.g. 4,8,16,32")
    rb.add_argument("--split", default="test", choices=("train", "val", "test"))
    rb.add_argument("--seed", type=int, default=None, help="defaults to the checkpoint's seed")
    rb.add_argument("--out", default=None, help="output CSV path")
    rb.set_defaults(fn=cmd_robustness)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except ModeError as exc:
        print(f"mode error: {exc}", file=sys.stderr)
        return 4
    except (CorruptFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
