"""Synthetic variable-length volume dataset, on-disk format, and sampling.

The task is built so that slice position is the only signal separating half
of the class pairs: two in-plane lesion patterns (one blob, two blobs) each
occur at one of two relative depths. Pattern is visible in any single slice;
depth is only recoverable from where the lesioned slices sit in the ordered
stack, so order-agnostic aggregators top out at chance within each pattern
pair.

Volumes are stored as headerless little-endian float32 raster files (slice,
row, column); a JSON manifest carries ids, shapes, labels, and splits, with
file paths relative to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import interp_row_weights
from .errors import ConfigError, CorruptFileError, InvalidInputError
from .rng import RngStream

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class Volume:
    id: str
    slices: np.ndarray  # (N, H, W) float64 in [0, 1]
    label: int
    split: str

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Position-sensitive 4-class task: {one blob, two blobs} x depths {0.3, 0.7}.

    Class c = pattern_index * 2 + depth_index, i.e. 0: single/shallow,
    1: single/deep, 2: double/shallow, 3: double/deep. The two classes that
    share a pattern differ only in where the lesion window sits along the
    stack.
    """

    num_classes: int = 4
    height: int = 32
    width: int = 32
    n_min: int = 24
    n_max: int = 64
    depth_centers: tuple[float, float] = (0.3, 0.7)
    # half-window around the class depth, relative; wide enough that a short
    # center-weighted subsample still catches the lesion with high probability
    lesion_width: float = 0.15
    noise_level: float = 0.05
    lesion_amplitude: float = 0.85
    blob_sigma: float = 3.2  # in-plane gaussian radius, pixels

    def __post_init__(self):
        if self.num_classes != 2 * len(self.depth_centers):
            raise ConfigError(
                "num_classes must equal 2 patterns x number of depth centers"
            )
        if not 2 <= self.n_min <= self.n_max:
            raise ConfigError(f"bad slice-count range [{self.n_min}, {self.n_max}]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ConfigError(f"noise_level must be in [0, 1], got {self.noise_level}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["depth_centers"] = list(self.depth_centers)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticTaskSpec":
        raw = dict(raw)
        raw["depth_centers"] = tuple(raw["depth_centers"])
        return cls(**raw)


@dataclass
class ManifestEntry:
    id: str
    file: str
    n_slices: int
    height: int
    width: int
    label: int
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    task: dict
    format_version: int = MANIFEST_VERSION

    def for_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def save(self, path) -> None:
        doc = {
            "format_version": self.format_version,
            "task": self.task,
            "entries": [asdict(e) for e in self.entries],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise CorruptFileError(f"{path}: duplicate sample ids in manifest")
        return cls(entries=entries, task=doc["task"], format_version=doc["format_version"])


# ---------------------------------------------------------------------------
# volume files: raw little-endian float32, C order, no header


def save_volume(path, slices: np.ndarray) -> None:
    np.ascontiguousarray(slices, dtype="<f4").tofile(path)


def load_volume(entry: ManifestEntry, base_dir) -> Volume:
    path = os.path.join(base_dir, entry.file)
    expected = entry.n_slices * entry.height * entry.width * 4
    try:
        actual = os.path.getsize(path)
    except OSError as exc:
        raise CorruptFileError(f"{path}: cannot stat volume file: {exc}") from exc
    if actual != expected:
        raise CorruptFileError(
            f"{path}: expected {expected} bytes "
            f"({entry.n_slices}x{entry.height}x{entry.width} float32), found {actual}"
        )
    flat = np.fromfile(path, dtype="<f4")
    slices = flat.astype(np.float64).reshape(entry.n_slices, entry.height, entry.width)
    return Volume(id=entry.id, slices=slices, label=entry.label, split=entry.split)


def load_split(manifest: Manifest, base_dir, split: str) -> list[Volume]:
    return [load_volume(e, base_dir) for e in manifest.for_split(split)]


# ---------------------------------------------------------------------------
# synthesis


def _upsample_bilinear(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    """Align-corners bilinear upsampling of (..., h, w) to (..., height, width)."""
    lo_r, w_r = interp_row_weights(coarse.shape[-2], height)
    rows = coarse[..., lo_r, :] * (1.0 - w_r)[:, None] + coarse[..., lo_r + 1, :] * w_r[:, None]
    lo_c, w_c = interp_row_weights(coarse.shape[-1], width)
    return rows[..., lo_c] * (1.0 - w_c) + rows[..., lo_c + 1] * w_c


def _pattern_template(task: SyntheticTaskSpec, pattern_index: int) -> np.ndarray:
    """In-plane lesion image with peak 1: one centered blob, or two side blobs."""
    h, w = task.height, task.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    s2 = 2.0 * task.blob_sigma**2

    def blob(cy, cx):
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / s2)

    if pattern_index == 0:
        return blob(h / 2.0, w / 2.0)
    return np.maximum(blob(h / 2.0, w / 4.0), blob(h / 2.0, 3.0 * w / 4.0))


def synthesize_volume(task: SyntheticTaskSpec, label: int, rng: RngStream) -> np.ndarray:
    """One (N, H, W) sample for a class; fully determined by the stream."""
    n = int(rng.integers(task.n_min, task.n_max + 1))
    h, w = task.height, task.width
    if task.noise_level > 0:
        coarse = rng.uniform((n, max(h // 8, 2), max(w // 8, 2)))
        background = task.noise_level * _upsample_bilinear(coarse, h, w)
    else:
        background = np.zeros((n, h, w))
    pattern_index, depth_index = divmod(label, len(task.depth_centers))
    template = _pattern_template(task, pattern_index)
    depth = task.depth_centers[depth_index]
    rel = np.arange(n, dtype=np.float64) / (n - 1)
    inside = np.abs(rel - depth) <= task.lesion_width
    sigma_r = 0.75 * task.lesion_width
    falloff = np.where(inside, np.exp(-((rel - depth) ** 2) / (2.0 * sigma_r**2)), 0.0)
    volume = background + task.lesion_amplitude * falloff[:, None, None] * template
    return np.clip(volume, 0.0, 1.0)


def generate_synthetic_dataset(
    task: SyntheticTaskSpec,
    counts: dict[str, int],
    out_dir,
    seed: int,
) -> Manifest:
    """Write balanced per-split volume files plus a manifest; seed-determined.

    ``counts`` maps split name to the per-class sample count for that split.
    """
    for split, per_class in counts.items():
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
        if per_class < 1:
            raise ConfigError(f"split {split!r} needs at least 1 sample per class")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for split in SPLITS:
        per_class = counts.get(split, 0)
        for label in range(task.num_classes):
            for k in range(per_class):
                vid = f"{split}-c{label}-{k:03d}"
                rng = RngStream.for_label(seed, f"sample/{vid}")
                slices = synthesize_volume(task, label, rng)
                filename = f"{vid}.raw"
                save_volume(os.path.join(out_dir, filename), slices)
                entries.append(
                    ManifestEntry(
                        id=vid,
                        file=filename,
                        n_slices=slices.shape[0],
                        height=task.height,
                        width=task.width,
                        label=label,
                        split=split,
                    )
                )
    manifest = Manifest(entries=entries, task=task.to_dict())
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


# ---------------------------------------------------------------------------
# slice subsampling and augmentation


def subsample_slices(volume, n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Pick n distinct slice indices from a center-weighted discretized normal.

    Draws come from N((N-1)/2, (N/4)^2) rounded to the nearest index,
    rejecting out-of-range and repeated indices; the chosen indices are
    returned sorted ascending along with the corresponding slices.
    """
    stack = volume.slices if isinstance(volume, Volume) else np.asarray(volume)
    total = stack.shape[0]
    if not 1 <= n <= total:
        raise InvalidInputError(f"cannot pick {n} slices from a stack of {total}")
    if n == total:
        idx = np.arange(total)
        return stack.copy(), idx
    mean = (total - 1) / 2.0
    std = total / 4.0
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < n:
        draws = np.rint(rng.normal((max(2 * (n - len(chosen)), 16),), mean, std))
        for x in draws:
            i = int(x)
            if 0 <= i < total and i not in seen:
                seen.add(i)
                chosen.append(i)
                if len(chosen) == n:
                    break
    idx = np.sort(np.array(chosen))
    return stack[idx], idx


@dataclass(frozen=True)
class AugmentConfig:
    apply_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.8, 1.25)
    max_flip_rate: float = 0.02
    max_erase_fraction: float = 0.2
    erase_fill: float = 0.5


def augment(slices: np.ndarray, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """Volume-level augmentation: brightness scale, salt/pepper, one erased
    rectangle shared across slices. Each stage fires with ``apply_prob``;
    output stays in [0, 1]."""
    out = np.asarray(slices, dtype=np.float64).copy()
    _, h, w = out.shape
    if rng.uniform() < cfg.apply_prob:
        factor = rng.uniform(low=cfg.brightness_range[0], high=cfg.brightness_range[1])
        out = np.clip(out * factor, 0.0, 1.0)
    if rng.uniform() < cfg.apply_prob:
        rate = rng.uniform(low=0.0, high=cfg.max_flip_rate)
        u = rng.uniform(out.shape)
        out[u < rate / 2.0] = 1.0
        out[(u >= rate / 2.0) & (u < rate)] = 0.0
    if rng.uniform() < cfg.apply_prob:
        frac = rng.uniform(low=0.02, high=cfg.max_erase_fraction)
        aspect = rng.uniform(low=0.5, high=2.0)
        eh = min(h, max(1, int(math.sqrt(frac * h * w * aspect))))
        ew = min(w, max(1, int(math.sqrt(frac * h * w / aspect))))
        top = int(rng.integers(0, h - eh + 1))
        left = int(rng.integers(0, w - ew + 1))
        out[:, top : top + eh, left : left + ew] = cfg.erase_fill
    return out
