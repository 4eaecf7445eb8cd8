"""Classification metrics: balanced accuracy, one-vs-all AUROC, confusion.

AUROC is the Mann-Whitney rank statistic with half credit for ties, which is
exactly the pair-counting definition: (#(positive scored above negative) +
0.5 * #ties) / (P * N). Classes with no positives or no negatives in the
one-vs-all framing have undefined AUROC; they are excluded from the macro
mean and reported in ``undefined_classes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with entry (i, j) = #samples of true class i predicted as j."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InvalidInputError(
            f"label arrays disagree in length: {y_true.shape} vs {y_pred.shape}"
        )
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise InvalidInputError(f"{name} holds labels outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return counts


def balanced_accuracy(y_true, y_pred, num_classes: int) -> float:
    """Unweighted mean of per-class recall; every class must appear in y_true."""
    counts = confusion_matrix(y_true, y_pred, num_classes)
    row_sums = counts.sum(axis=1)
    if np.any(row_sums == 0):
        missing = [int(c) for c in np.flatnonzero(row_sums == 0)]
        raise InvalidInputError(f"recall undefined: classes {missing} absent from y_true")
    return float((np.diag(counts) / row_sums).mean())


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged; exact in float64 (halves only)."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _auroc_binary(positive_mask: np.ndarray, scores: np.ndarray) -> float:
    p = int(positive_mask.sum())
    n = positive_mask.size - p
    ranks = _average_ranks(scores)
    u = ranks[positive_mask].sum() - p * (p + 1) / 2.0
    return u / (p * n)


def auroc_ova(y_true, scores, num_classes: int) -> tuple[float, list[float], list[int]]:
    """One-vs-all AUROC per class from the (n, K) score matrix.

    Returns (macro mean over defined classes, per-class values with NaN where
    undefined, indices of undefined classes).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != (y_true.size, num_classes):
        raise InvalidInputError(
            f"scores must be ({y_true.size}, {num_classes}), got {scores.shape}"
        )
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    per_class: list[float] = []
    undefined: list[int] = []
    for c in range(num_classes):
        mask = y_true == c
        if mask.all() or not mask.any():
            per_class.append(math.nan)
            undefined.append(c)
            continue
        per_class.append(_auroc_binary(mask, scores[:, c]))
    defined = [v for v in per_class if not math.isnan(v)]
    if not defined:
        raise InvalidInputError("AUROC undefined for every class")
    return float(np.mean(defined)), per_class, undefined


@dataclass
class EvalResult:
    bacc: float
    auroc_macro: float
    per_class_auroc: list[float]
    confusion: np.ndarray
    undefined_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bacc": self.bacc,
            "auroc_macro": self.auroc_macro,
            "per_class_auroc": [
                None if math.isnan(v) else v for v in self.per_class_auroc
            ],
            "confusion": self.confusion.tolist(),
            "undefined_classes": self.undefined_classes,
        }


def evaluate_predictions(y_true, y_pred, scores, num_classes: int) -> EvalResult:
    macro, per_class, undefined = auroc_ova(y_true, scores, num_classes)
    return EvalResult(
        bacc=balanced_accuracy(y_true, y_pred, num_classes),
        auroc_macro=macro,
        per_class_auroc=per_class,
        confusion=confusion_matrix(y_true, y_pred, num_classes),
        undefined_classes=undefined,
    )
