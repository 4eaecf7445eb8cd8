"""Training and evaluation loops.

One optimizer step: draw a sequence length (per step, shared by the batch,
for the variable-length mode; fixed otherwise), subsample every volume in the
batch to that length with center-weighted sampling, augment, forward, weighted
cross-entropy, backward, global-norm clip, AdamW with cosine-annealed learning
rate. The checkpoint kept is the one with the highest validation balanced
accuracy (earliest epoch on ties).

Evaluation subsamples each volume with a stream keyed by (seed, volume id,
length), so a given (seed, split, length) always sees the same slices no
matter when or in what order it runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregator import VLFAT, sample_length
from .autodiff import Tensor, log_softmax, mul, neg, reduce_mean, reduce_sum, reshape
from .data import AugmentConfig, Volume, augment, subsample_slices
from .errors import ConfigError, InvalidInputError, TrainingAborted
from .layers import Param
from .metrics import EvalResult, evaluate_predictions
from .model import VolumeModel, save_checkpoint
from .rng import RngStream

METRICS_HEADER = ("epoch", "split", "loss", "bacc", "auroc", "lr", "n_mean")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 10
    lr_max: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 0.05
    grad_clip: float | None = 1.0
    augment: bool = True
    eval_length: int | str | None = None  # None: per-mode default; "all" allowed
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_max >= self.lr_min >= 0.0:
            raise ConfigError(
                f"need lr_max >= lr_min >= 0, got lr_max={self.lr_max}, lr_min={self.lr_min}"
            )
        if isinstance(self.eval_length, str) and self.eval_length != "all":
            raise ConfigError(f"eval_length must be an integer or 'all', got {self.eval_length!r}")


def class_weights(labels, num_classes: int) -> np.ndarray:
    """Inverse-frequency weights w_c = total / (K * count_c); mean 1 when balanced."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        missing = [int(c) for c in np.flatnonzero(counts == 0)]
        raise ConfigError(f"classes {missing} missing from the training labels")
    return labels.size / (num_classes * counts.astype(np.float64))


def weighted_ce_loss(logits: Tensor, targets, weights) -> Tensor:
    """-weights[target] * log softmax(logits)[target], averaged over the batch."""
    single = logits.ndim == 1
    if single:
        logits = reshape(logits, (1, logits.shape[0]))
        targets = [targets]
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    k = logits.shape[-1]
    if np.any(weights <= 0) or weights.shape != (k,):
        raise InvalidInputError(f"weights must be {k} positive values")
    if np.any(targets < 0) or np.any(targets >= k):
        raise InvalidInputError(f"targets must lie in [0, {k})")
    picked = np.zeros(logits.shape)
    picked[np.arange(targets.size), targets] = weights[targets]
    per_sample = neg(reduce_sum(mul(log_softmax(logits, axis=-1), Tensor(picked)), axis=1))
    return reduce_mean(per_sample)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr_max at step 0 to lr_min at step ``total``."""
    if total < 1 or not 0 <= step <= total:
        raise InvalidInputError(f"cosine_lr needs 0 <= step <= total, got {step}/{total}")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


class AdamW:
    """Decoupled weight decay: p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p).

    Decay touches only parameters tagged ``decay=True`` (linear weights);
    biases, norms, tokens, and positional tables shrink would hurt, so they
    are exempt.
    """

    def __init__(
        self,
        named_params,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.items: list[tuple[str, Param]] = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.items}
        self.v = {name: np.zeros_like(p.data) for name, p in self.items}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.items:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if getattr(p, "decay", False) and self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _ce_value(logits: np.ndarray, target: int, weights: np.ndarray) -> float:
    shifted = logits - logits.max()
    return float(-weights[target] * (shifted[target] - np.log(np.exp(shifted).sum())))


def default_eval_length(model_cfg) -> int:
    if model_cfg.aggregator == VLFAT:
        return max(model_cfg.schedule)
    return model_cfg.train_length


@dataclass
class Evaluation:
    loss: float
    result: EvalResult
    n_mean: float
    y_pred: np.ndarray
    scores: np.ndarray
    warnings: list[dict] = field(default_factory=list)


def evaluate(
    model: VolumeModel,
    volumes: list[Volume],
    n_slices,
    seed: int,
    weights: np.ndarray | None = None,
) -> Evaluation:
    """Evaluate on a split at a fixed length (or "all" for full stacks).

    A volume shorter than the requested length is evaluated at its full depth
    and recorded in ``warnings``.
    """
    if not volumes:
        raise InvalidInputError("cannot evaluate on an empty split")
    k = model.cfg.num_classes
    if weights is None:
        weights = np.ones(k)
    y_true, y_pred, losses, ns = [], [], [], []
    scores = np.empty((len(volumes), k))
    warnings: list[dict] = []
    for i, vol in enumerate(volumes):
        total = vol.n_slices
        if n_slices == "all":
            n = total
        else:
            n = int(n_slices)
            if n > total:
                warnings.append({"id": vol.id, "requested": n, "used": total})
                n = total
        if n == total:
            sub = vol.slices
        else:
            sub, _ = subsample_slices(
                vol.slices, n, RngStream.for_label(seed, f"subsample/{vol.id}/{n}")
            )
        logits = model.forward_volume(sub).data
        losses.append(_ce_value(logits, vol.label, weights))
        scores[i] = _softmax_np(logits)
        y_true.append(vol.label)
        y_pred.append(int(np.argmax(logits)))
        ns.append(n)
    result = evaluate_predictions(y_true, y_pred, scores, k)
    return Evaluation(
        loss=float(np.mean(losses)),
        result=result,
        n_mean=float(np.mean(ns)),
        y_pred=np.asarray(y_pred),
        scores=scores,
        warnings=warnings,
    )


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_bacc: float
    model: VolumeModel


def write_metrics_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for row in history:
            writer.writerow([row[key] for key in METRICS_HEADER])


def train(
    model: VolumeModel,
    train_vols: list[Volume],
    val_vols: list[Volume],
    cfg: TrainConfig,
    seed: int,
    checkpoint_path=None,
    metrics_path=None,
) -> TrainResult:
    """Run the full loop; returns history and the model restored to its best
    validation checkpoint. Bit-reproducible for a fixed (seed, config, data)."""
    if not train_vols or not val_vols:
        raise ConfigError("training needs non-empty train and val splits")
    mcfg = model.cfg
    k = mcfg.num_classes
    max_len = max(mcfg.schedule) if mcfg.aggregator == VLFAT else mcfg.train_length
    shortest = min(v.n_slices for v in train_vols)
    if max_len > shortest:
        raise ConfigError(
            f"training length {max_len} exceeds the shortest training volume ({shortest} slices)"
        )
    weights = class_weights([v.label for v in train_vols], k)
    optimizer = AdamW(
        model.named_parameters(),
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    eval_n = cfg.eval_length if cfg.eval_length is not None else default_eval_length(mcfg)

    order_rng = RngStream.for_label(seed, "order")
    length_rng = RngStream.for_label(seed, "length")
    sample_rng = RngStream.for_label(seed, "subsample")
    augment_rng = RngStream.for_label(seed, "augment")
    dropout_rng = RngStream.for_label(seed, "dropout")
    aug_cfg = AugmentConfig()

    steps_per_epoch = math.ceil(len(train_vols) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    lr = cosine_lr(0, total_steps, cfg.lr_max, cfg.lr_min)
    history: list[dict] = []
    best_bacc = -1.0
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}

    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(len(train_vols))
        loss_sum = 0.0
        seen = 0
        ns: list[int] = []
        epoch_true: list[int] = []
        epoch_pred: list[int] = []
        epoch_scores: list[np.ndarray] = []
        for start in range(0, len(perm), cfg.batch_size):
            batch_ids = perm[start : start + cfg.batch_size]
            if mcfg.aggregator == VLFAT:
                n = sample_length(mcfg.schedule, length_rng)
            else:
                n = mcfg.train_length
            stacks = []
            targets = []
            for i in batch_ids:
                vol = train_vols[i]
                sub, _ = subsample_slices(vol.slices, n, sample_rng)
                if cfg.augment:
                    sub = augment(sub, aug_cfg, augment_rng)
                stacks.append(sub)
                targets.append(vol.label)
            batch = np.stack(stacks)
            model.zero_grad()
            logits = model.forward_batch(batch, train_mode=True, rng=dropout_rng)
            loss = weighted_ce_loss(logits, targets, weights)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingAborted(epoch, step, lr)
            loss.backward()
            if cfg.grad_clip:
                clip_grad_norm(list(model.parameters()), cfg.grad_clip)
            lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min)
            optimizer.step(lr)
            step += 1
            loss_sum += loss_value * len(batch_ids)
            seen += len(batch_ids)
            ns.append(n)
            probs = _softmax_np(logits.data)
            epoch_true.extend(targets)
            epoch_pred.extend(int(c) for c in probs.argmax(axis=1))
            epoch_scores.append(probs)
        train_metrics = evaluate_predictions(
            epoch_true, epoch_pred, np.concatenate(epoch_scores), k
        )
        history.append(
            {
                "epoch": epoch,
                "split": "train",
                "loss": loss_sum / seen,
                "bacc": train_metrics.bacc,
                "auroc": train_metrics.auroc_macro,
                "lr": lr,
                "n_mean": float(np.mean(ns)),
            }
        )
        val = evaluate(model, val_vols, eval_n, seed, weights)
        history.append(
            {
                "epoch": epoch,
                "split": "val",
                "loss": val.loss,
                "bacc": val.result.bacc,
                "auroc": val.result.auroc_macro,
                "lr": lr,
                "n_mean": val.n_mean,
            }
        )
        if val.result.bacc > best_bacc:
            best_bacc = val.result.bacc
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in model.named_parameters()}

    for name, p in model.named_parameters():
        p.data = best_params[name].copy()
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            model,
            meta={"best_epoch": best_epoch, "val_bacc": best_bacc, "seed": seed},
        )
    if metrics_path is not None:
        write_metrics_csv(metrics_path, history)
    return TrainResult(
        history=history, best_epoch=best_epoch, best_val_bacc=best_bacc, model=model
    )
