"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def check_volume_list(X, image_size: tuple[int, int] | None = None) -> list[np.ndarray]:
    """Coerce X into a list of float64 (N_i, H, W) volumes.

    Accepts a sequence of rank-3 arrays (variable N_i) or one rank-4 array.
    All volumes must share (H, W), be finite, and have at least one slice.
    """
    if isinstance(X, np.ndarray) and X.ndim == 4:
        X = list(X)
    if not hasattr(X, "__len__") or len(X) == 0:
        raise InvalidInputError("X must be a non-empty sequence of (N, H, W) volumes")
    volumes = []
    plane = image_size
    for i, item in enumerate(X):
        arr = np.asarray(item, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(
                f"X[{i}] must be a rank-3 (N, H, W) volume, got shape {arr.shape}"
            )
        if arr.shape[0] < 1:
            raise InvalidInputError(f"X[{i}] has no slices")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError(f"X[{i}] holds non-finite values")
        if plane is None:
            plane = arr.shape[1:]
        elif arr.shape[1:] != tuple(plane):
            raise InvalidInputError(
                f"X[{i}] has slice dims {arr.shape[1:]}, expected {tuple(plane)}"
            )
        volumes.append(arr)
    return volumes


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise InvalidInputError(
            f"y must be a 1-d array of {n_samples} labels, got shape {y.shape}"
        )
    return y
