"""Counter-based random streams.

Every source of randomness in the package is an :class:`RngStream` keyed by
``(seed, stream_id)``. Streams are backed by the Philox counter-based bit
generator, so an identical key reproduces the identical draw sequence on any
platform and distinct keys give statistically independent streams. Components
derive their own streams from a run seed via :meth:`RngStream.for_label`, so
results do not depend on the order in which components happen to draw.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_id(label: str) -> int:
    """Stable 64-bit id for a stream label (platform independent)."""
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Deterministic random stream identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @classmethod
    def for_label(cls, seed: int, label: str) -> "RngStream":
        """Stream for a named component, e.g. ``for_label(seed, "init")``."""
        return cls(seed, _label_id(label))

    def child(self, label: str) -> "RngStream":
        """Derive an independent stream keyed by this stream's id and a label."""
        return RngStream(self.seed, _label_id(f"{self.stream_id}/{label}"))

    def _count(self, shape) -> None:
        self.counter += int(np.prod(shape)) if shape is not None else 1

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        self._count(shape)
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0):
        self._count(shape)
        return self._gen.normal(mean, std, size=shape)

    def integers(self, low: int, high: int, shape=None):
        """Uniform integers in the half-open range [low, high)."""
        self._count(shape)
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self._count((n,))
        return self._gen.permutation(n)

    def truncated_normal(
        self,
        shape,
        mean: float = 0.0,
        std: float = 1.0,
        lo: float = -2.0,
        hi: float = 2.0,
    ) -> np.ndarray:
        """Draws from N(mean, std^2) conditioned on [lo, hi], by rejection.

        All returned values lie in [lo, hi]. The batched rejection policy is a
        pure function of progress, so results are reproducible per stream.
        """
        if not lo < hi:
            raise ValueError(f"truncated_normal requires lo < hi, got [{lo}, {hi}]")
        if std <= 0:
            raise ValueError(f"truncated_normal requires std > 0, got {std}")
        total = int(np.prod(shape)) if shape is not None else 1
        out = np.empty(total, dtype=np.float64)
        filled = 0
        while filled < total:
            want = total - filled
            draw = self.normal((max(2 * want, 16),), mean=mean, std=std)
            keep = draw[(draw >= lo) & (draw <= hi)][:want]
            out[filled : filled + keep.size] = keep
            filled += keep.size
        return out.reshape(shape) if shape is not None else out[0]
