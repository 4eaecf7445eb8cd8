"""Run configuration: one JSON document per experiment, strictly validated.

Sections: ``seed``, ``out_dir``, ``data`` (generation target or manifest to
read), ``model``, ``train``. Unknown keys anywhere are rejected before any
work happens, and each command declares which sections it needs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .data import SPLITS, SyntheticTaskSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_TOP_KEYS = {"seed", "out_dir", "data", "model", "train"}
_DATA_KEYS = {"out_dir", "manifest", "counts", "task"}
_MODEL_KEYS = {
    "aggregator",
    "image_size",
    "patch_size",
    "embed_dim",
    "encoder_blocks",
    "encoder_heads",
    "agg_blocks",
    "agg_heads",
    "mlp_ratio",
    "dropout",
    "num_classes",
    "schedule",
    "train_length",
    "pe_renormalize",
}
_TRAIN_KEYS = {
    "epochs",
    "batch_size",
    "lr_max",
    "lr_min",
    "weight_decay",
    "grad_clip",
    "augment",
    "eval_length",
}
_TASK_KEYS = {f.name for f in dataclasses.fields(SyntheticTaskSpec)}


@dataclass
class DataSection:
    out_dir: str | None
    manifest: str | None
    counts: dict[str, int] | None
    task: SyntheticTaskSpec


@dataclass
class RunConfig:
    seed: int
    out_dir: str | None
    data: DataSection | None
    model: ModelConfig | None
    train: TrainConfig | None
    raw: dict


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc


def _reject_unknown(section: str, doc: dict, allowed: set[str]) -> None:
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")


def _require(section: str, doc: dict, key: str):
    if key not in doc or doc[key] is None:
        raise ConfigError(f"{section}: missing required key {key!r}")
    return doc[key]


def _expect(section: str, key: str, value, kinds, label: str):
    if not isinstance(value, kinds) or isinstance(value, bool) and bool not in (
        kinds if isinstance(kinds, tuple) else (kinds,)
    ):
        raise ConfigError(f"{section}.{key}: expected {label}, got {value!r}")
    return value


def _parse_data(doc: dict, command: str) -> DataSection:
    _reject_unknown("data", doc, _DATA_KEYS)
    task_doc = doc.get("task", {})
    if not isinstance(task_doc, dict):
        raise ConfigError("data.task: expected an object")
    _reject_unknown("data.task", task_doc, _TASK_KEYS)
    task_doc = dict(task_doc)
    if "depth_centers" in task_doc:
        task_doc["depth_centers"] = tuple(task_doc["depth_centers"])
    task = SyntheticTaskSpec(**task_doc)
    counts = doc.get("counts")
    if counts is not None:
        if not isinstance(counts, dict):
            raise ConfigError("data.counts: expected an object of per-split counts")
        for split, value in counts.items():
            if split not in SPLITS:
                raise ConfigError(f"data.counts: unknown split {split!r}")
            _expect("data.counts", split, value, int, "an integer")
    if command == "gen-data":
        _require("data", doc, "out_dir")
        if counts is None:
            raise ConfigError("data: gen-data requires per-split counts")
    if command == "train":
        _require("data", doc, "manifest")
    return DataSection(
        out_dir=doc.get("out_dir"),
        manifest=doc.get("manifest"),
        counts=counts,
        task=task,
    )


def _parse_model(doc: dict) -> ModelConfig:
    _reject_unknown("model", doc, _MODEL_KEYS)
    image_size = doc.get("image_size", 32)
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    elif isinstance(image_size, (list, tuple)) and len(image_size) == 2:
        image_size = tuple(int(v) for v in image_size)
    else:
        raise ConfigError(f"model.image_size: expected an int or [H, W], got {image_size!r}")
    encoder = EncoderConfig(
        image_size=image_size,
        patch_size=int(doc.get("patch_size", 8)),
        embed_dim=int(doc.get("embed_dim", 32)),
        num_blocks=int(doc.get("encoder_blocks", 2)),
        num_heads=int(doc.get("encoder_heads", 4)),
        mlp_ratio=float(doc.get("mlp_ratio", 4.0)),
        dropout=float(doc.get("dropout", 0.0)),
    )
    schedule = doc.get("schedule")
    return ModelConfig(
        encoder=encoder,
        aggregator=doc.get("aggregator", "vlfat"),
        num_classes=int(doc.get("num_classes", 4)),
        agg_blocks=int(doc.get("agg_blocks", 2)),
        agg_heads=int(doc.get("agg_heads", 4)),
        agg_mlp_ratio=float(doc.get("mlp_ratio", 4.0)),
        schedule=tuple(schedule) if schedule is not None else None,
        train_length=doc.get("train_length"),
        pe_renormalize=bool(doc.get("pe_renormalize", False)),
    )


def _parse_train(doc: dict) -> TrainConfig:
    _reject_unknown("train", doc, _TRAIN_KEYS)
    grad_clip = doc.get("grad_clip", 1.0)
    return TrainConfig(
        epochs=int(doc.get("epochs", 60)),
        batch_size=int(doc.get("batch_size", 10)),
        lr_max=float(doc.get("lr_max", 1e-3)),
        lr_min=float(doc.get("lr_min", 0.0)),
        weight_decay=float(doc.get("weight_decay", 0.05)),
        grad_clip=float(grad_clip) if grad_clip is not None else None,
        augment=bool(doc.get("augment", True)),
        eval_length=doc.get("eval_length"),
    )


def parse_run_config(doc: dict, command: str) -> RunConfig:
    """Validate a parsed JSON document for one command; raises ConfigError."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    _reject_unknown("config", doc, _TOP_KEYS)
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    data = _parse_data(doc.get("data", {}), command) if command in ("gen-data", "train") else None
    model = None
    train = None
    if command == "train":
        if "model" not in doc:
            raise ConfigError("train requires a 'model' section")
        model = _parse_model(doc["model"])
        train = _parse_train(doc.get("train", {}))
        if not doc.get("out_dir"):
            raise ConfigError("train requires a top-level 'out_dir'")
    return RunConfig(
        seed=seed,
        out_dir=doc.get("out_dir"),
        data=data,
        model=model,
        train=train,
        raw=doc,
    )
