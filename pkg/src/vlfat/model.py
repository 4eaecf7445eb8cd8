"""Full classifier: slice encoder -> aggregator -> linear class head.

Also owns the checkpoint format: a magic tag, a little-endian uint64 header
length, a JSON header (format version, model config, metadata, and the byte
offset of every named parameter), then one flat blob of little-endian float64
values in parameter order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .aggregator import (
    AVG_POOL,
    CONV1D,
    FAT,
    MAX_POOL,
    NO_PE,
    SIN_PE,
    TRANSFORMER_MODES,
    VLFAT,
    Conv1DAggregator,
    FATAggregator,
    aggregate_pool,
    normalize_mode,
)
from .autodiff import Tensor, reshape
from .encoder import EncoderConfig, SliceEncoder
from .errors import ConfigError, CorruptFileError, ShapeError
from .layers import Linear, Module
from .rng import RngStream

_MAGIC = b"VLFC"
FORMAT_VERSION = 1

_PE_MODE = {FAT: "learned", VLFAT: "learned", SIN_PE: "sinusoidal", NO_PE: "none"}


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aggregator: str = VLFAT
    num_classes: int = 4
    agg_blocks: int = 2
    agg_heads: int = 4
    agg_mlp_ratio: float = 4.0
    schedule: tuple[int, ...] | None = (4, 6, 8, 12)
    train_length: int | None = None
    pe_renormalize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "aggregator", normalize_mode(self.aggregator))
        if self.schedule is not None:
            object.__setattr__(self, "schedule", tuple(int(v) for v in self.schedule))
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.encoder.embed_dim % self.agg_heads:
            raise ConfigError(
                f"embed_dim {self.encoder.embed_dim} not divisible by agg_heads {self.agg_heads}"
            )
        if self.aggregator == VLFAT:
            if not self.schedule:
                raise ConfigError("vlfat requires a non-empty length schedule")
            if self.train_length is not None:
                raise ConfigError("vlfat uses a schedule, not a fixed train_length")
            if min(self.schedule) < 1:
                raise ConfigError(f"schedule lengths must be >= 1, got {self.schedule}")
        else:
            if self.schedule is not None:
                raise ConfigError(f"a length schedule is only valid for vlfat, not {self.aggregator}")
            if self.train_length is None:
                raise ConfigError(f"{self.aggregator} requires a fixed train_length")
            if self.train_length < 1:
                raise ConfigError(f"train_length must be >= 1, got {self.train_length}")

    @property
    def pe_base_length(self) -> int | None:
        """Canonical PE bank length: the longest length seen during training."""
        if self.aggregator == VLFAT:
            return max(self.schedule)
        if self.aggregator == FAT:
            return self.train_length
        return None

    def param_count(self) -> int:
        """Closed-form trainable parameter count for the whole classifier."""
        d = self.encoder.embed_dim
        total = self.encoder.param_count()
        if self.aggregator in TRANSFORMER_MODES:
            hidden = int(d * self.agg_mlp_ratio)
            block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden + hidden * d + d)
            total += d + self.agg_blocks * block + 2 * d
            if self.pe_base_length is not None:
                total += (self.pe_base_length + 1) * d
        elif self.aggregator == CONV1D:
            total += 3 * d * d + d
        total += d * self.num_classes + self.num_classes
        return total

    def to_dict(self) -> dict:
        out = asdict(self)
        out["encoder"]["image_size"] = list(self.encoder.image_size)
        out["schedule"] = list(self.schedule) if self.schedule is not None else None
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        raw = dict(raw)
        enc = dict(raw.pop("encoder"))
        enc["image_size"] = tuple(enc["image_size"])
        schedule = raw.pop("schedule", None)
        return cls(
            encoder=EncoderConfig(**enc),
            schedule=tuple(schedule) if schedule is not None else None,
            **raw,
        )


class VolumeModel(Module):
    def __init__(self, cfg: ModelConfig, rng: RngStream):
        self.cfg = cfg
        d = cfg.encoder.embed_dim
        self.encoder = SliceEncoder(cfg.encoder, rng)
        if cfg.aggregator in TRANSFORMER_MODES:
            self.aggregator = FATAggregator(
                d,
                cfg.agg_blocks,
                cfg.agg_heads,
                rng,
                pe_mode=_PE_MODE[cfg.aggregator],
                n_base=cfg.pe_base_length,
                mlp_ratio=cfg.agg_mlp_ratio,
                drop=cfg.encoder.dropout,
                pe_renormalize=cfg.pe_renormalize,
            )
        elif cfg.aggregator == CONV1D:
            self.aggregator = Conv1DAggregator(d, rng)
        else:
            self.aggregator = None
        self.head = Linear(d, cfg.num_classes, rng)

    def forward_batch(
        self,
        volumes: np.ndarray,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        """Logits (B, K) for a rectangular batch of (B, n, H, W) volumes."""
        volumes = np.asarray(volumes, dtype=np.float64)
        if volumes.ndim != 4:
            raise ShapeError(f"expected a (B, n, H, W) batch, got shape {volumes.shape}")
        b, n = volumes.shape[:2]
        flat = volumes.reshape(b * n, *volumes.shape[2:])
        embs = self.encoder.encode_stack(flat, train_mode, rng)
        embs = reshape(embs, (b, n, self.cfg.encoder.embed_dim))
        if self.aggregator is None:
            pooled = aggregate_pool(embs, self.cfg.aggregator)
        elif isinstance(self.aggregator, Conv1DAggregator):
            pooled = self.aggregator(embs)
        else:
            pooled = self.aggregator(embs, train_mode, rng)
        return self.head(pooled)

    def forward_volume(
        self,
        slices: np.ndarray,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        """Logits (K,) for one (n, H, W) volume; any n >= 1 is accepted."""
        slices = np.asarray(slices, dtype=np.float64)
        if slices.ndim != 3:
            raise ShapeError(f"expected an (n, H, W) volume, got shape {slices.shape}")
        out = self.forward_batch(slices[None], train_mode, rng)
        return reshape(out, (self.cfg.num_classes,))

    def scores(self, slices: np.ndarray) -> np.ndarray:
        """Softmax class probabilities for one volume, eval mode."""
        logits = self.forward_volume(slices).data
        shifted = np.exp(logits - logits.max())
        return shifted / shifted.sum()


def predict(logits) -> int:
    """Argmax class; ties resolve to the lowest index."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return int(np.argmax(values))


def save_checkpoint(path, model: VolumeModel, meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        entries.append(
            {"name": name, "shape": list(p.shape), "offset": offset, "numel": int(arr.size)}
        )
        blobs.append(arr.tobytes())
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "pe_base_length": model.cfg.pe_base_length,
        "meta": meta or {},
        "params": entries,
        "blob_bytes": offset,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[VolumeModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, metadata)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: not a model checkpoint (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, 4)
    header_end = 12 + header_len
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CorruptFileError(
            f"{path}: unsupported checkpoint version {header.get('format_version')}"
        )
    blob = raw[header_end:]
    if len(blob) != header["blob_bytes"]:
        raise CorruptFileError(
            f"{path}: parameter blob holds {len(blob)} bytes, header says {header['blob_bytes']}"
        )
    cfg = ModelConfig.from_dict(header["config"])
    model = VolumeModel(cfg, RngStream(0, 0))
    params = dict(model.named_parameters())
    seen = set()
    for entry in header["params"]:
        name = entry["name"]
        if name not in params:
            raise CorruptFileError(f"{path}: checkpoint names unknown parameter {name!r}")
        start = entry["offset"]
        values = np.frombuffer(blob, dtype="<f8", count=entry["numel"], offset=start)
        target = params[name]
        if values.size != target.size:
            raise CorruptFileError(
                f"{path}: parameter {name!r} holds {values.size} values, expected {target.size}"
            )
        target.data = values.reshape(entry["shape"]).astype(np.float64)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CorruptFileError(f"{path}: checkpoint is missing parameters {sorted(missing)}")
    return model, header["meta"]
