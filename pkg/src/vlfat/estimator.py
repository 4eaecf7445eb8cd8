"""Scikit-learn compatible front end for the volume classifier.

``VolumeClassifier`` follows the estimator protocol (``fit`` / ``predict`` /
``predict_proba`` / ``get_params`` / ``set_params``), so it clones and
composes with the usual tooling. X is a sequence of (N_i, H, W) arrays whose
slice counts may differ per sample; y is any 1-d label array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .aggregator import VLFAT, normalize_mode
from .data import Volume, subsample_slices
from .encoder import EncoderConfig
from .errors import InvalidInputError
from .model import ModelConfig, VolumeModel
from .rng import RngStream
from .training import TrainConfig, default_eval_length, train
from .validation import check_labels, check_volume_list


class VolumeClassifier(ClassifierMixin, BaseEstimator):
    """Variable-length volume classifier with a transformer aggregator.

    Parameters mirror the model and training configs; ``aggregator`` picks
    one of vlfat, fat, nope, sinpe, avgpool, maxpool, conv1d. For vlfat the
    per-step training length is drawn from ``schedule``; every other mode
    trains at the fixed ``train_length``.
    """

    def __init__(
        self,
        aggregator: str = "vlfat",
        image_size: int | tuple[int, int] = 32,
        patch_size: int = 8,
        embed_dim: int = 32,
        encoder_blocks: int = 2,
        encoder_heads: int = 4,
        agg_blocks: int = 2,
        agg_heads: int = 4,
        mlp_ratio: float = 4.0,
        dropout: float = 0.0,
        schedule: tuple[int, ...] = (4, 6, 8, 12),
        train_length: int = 8,
        eval_length: int | str | None = None,
        epochs: int = 60,
        batch_size: int = 10,
        lr_max: float = 1e-3,
        lr_min: float = 0.0,
        weight_decay: float = 0.05,
        grad_clip: float | None = 1.0,
        augment: bool = True,
        val_fraction: float = 0.2,
        seed: int = 0,
    ):
        self.aggregator = aggregator
        self.image_size = image_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.encoder_blocks = encoder_blocks
        self.encoder_heads = encoder_heads
        self.agg_blocks = agg_blocks
        self.agg_heads = agg_heads
        self.mlp_ratio = mlp_ratio
        self.dropout = dropout
        self.schedule = schedule
        self.train_length = train_length
        self.eval_length = eval_length
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.augment = augment
        self.val_fraction = val_fraction
        self.seed = seed

    def _plane(self) -> tuple[int, int]:
        if isinstance(self.image_size, int):
            return (self.image_size, self.image_size)
        return tuple(self.image_size)

    def _model_config(self, num_classes: int) -> ModelConfig:
        mode = normalize_mode(self.aggregator)
        encoder = EncoderConfig(
            image_size=self._plane(),
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            num_blocks=self.encoder_blocks,
            num_heads=self.encoder_heads,
            mlp_ratio=self.mlp_ratio,
            dropout=self.dropout,
        )
        return ModelConfig(
            encoder=encoder,
            aggregator=mode,
            num_classes=num_classes,
            agg_blocks=self.agg_blocks,
            agg_heads=self.agg_heads,
            agg_mlp_ratio=self.mlp_ratio,
            schedule=tuple(self.schedule) if mode == VLFAT else None,
            train_length=None if mode == VLFAT else self.train_length,
        )

    def _split(self, volumes: list[Volume]) -> tuple[list[Volume], list[Volume]]:
        """Stratified train/val split; val falls back to train when disabled."""
        if self.val_fraction <= 0.0:
            return volumes, volumes
        rng = RngStream.for_label(self.seed, "estimator/split")
        by_class: dict[int, list[Volume]] = {}
        for v in volumes:
            by_class.setdefault(v.label, []).append(v)
        train_set: list[Volume] = []
        val_set: list[Volume] = []
        for label in sorted(by_class):
            group = by_class[label]
            perm = rng.permutation(len(group))
            n_val = max(1, int(round(self.val_fraction * len(group))))
            if n_val >= len(group):
                n_val = len(group) - 1
            for j, g in enumerate(perm):
                (val_set if j < n_val else train_set).append(group[g])
        if not train_set or not val_set:
            raise InvalidInputError("not enough samples per class for a train/val split")
        return train_set, val_set

    def fit(self, X, y):
        volumes = check_volume_list(X, self._plane())
        y = check_labels(y, len(volumes))
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise InvalidInputError("fit needs at least two classes")
        cfg = self._model_config(self.classes_.size)
        wrapped = [
            Volume(id=f"fit-{i:05d}", slices=arr, label=int(c), split="train")
            for i, (arr, c) in enumerate(zip(volumes, encoded))
        ]
        train_set, val_set = self._split(wrapped)
        model = VolumeModel(cfg, RngStream.for_label(self.seed, "init"))
        result = train(
            model,
            train_set,
            val_set,
            TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr_max=self.lr_max,
                lr_min=self.lr_min,
                weight_decay=self.weight_decay,
                grad_clip=self.grad_clip,
                augment=self.augment,
                eval_length=self.eval_length,
            ),
            self.seed,
        )
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_val_bacc_ = result.best_val_bacc
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise InvalidInputError("this VolumeClassifier is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        volumes = check_volume_list(X, self._plane())
        n_eval = (
            self.eval_length
            if self.eval_length is not None
            else default_eval_length(self.model_.cfg)
        )
        probs = np.empty((len(volumes), self.classes_.size))
        for i, arr in enumerate(volumes):
            n = arr.shape[0] if n_eval == "all" else min(int(n_eval), arr.shape[0])
            if n < arr.shape[0]:
                arr, _ = subsample_slices(
                    arr, n, RngStream.for_label(self.seed, f"predict/{i}/{n}")
                )
            probs[i] = self.model_.scores(arr)
        return probs

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[probs.argmax(axis=1)]
