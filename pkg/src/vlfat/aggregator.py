"""Volume feature aggregators.

Turns a sequence of slice embeddings into one volume embedding. The
transformer aggregator prepends a learnable volume classification token and
can run with a learnable positional table (interpolated to the sequence
length at hand), a sinusoidal table, or no positional signal at all
("bag of slices"). Average/max pooling and a kernel-3 1D convolution are the
order-agnostic and minimal order-aware baselines.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    add,
    clip,
    concat,
    dropout,
    gelu,
    interp_linear_rows,
    matmul,
    mul,
    narrow,
    reduce_max,
    reduce_mean,
    reshape,
)
from .errors import ConfigError, InvalidInputError
from .layers import (
    Block,
    LayerNorm,
    Module,
    Param,
    prepend_token,
    trunc_normal_param,
    xavier_uniform,
)
from .rng import RngStream

FAT = "fat"
VLFAT = "vlfat"
NO_PE = "nope"
SIN_PE = "sinpe"
AVG_POOL = "avgpool"
MAX_POOL = "maxpool"
CONV1D = "conv1d"

AGGREGATOR_MODES = (FAT, VLFAT, NO_PE, SIN_PE, AVG_POOL, MAX_POOL, CONV1D)
TRANSFORMER_MODES = (FAT, VLFAT, NO_PE, SIN_PE)
POSITIONAL_MODES = (FAT, VLFAT)  # modes that carry a learnable PE bank


def normalize_mode(mode: str) -> str:
    name = str(mode).lower().replace("-", "").replace("_", "")
    if name not in AGGREGATOR_MODES:
        raise ConfigError(f"unknown aggregator mode {mode!r}; expected one of {AGGREGATOR_MODES}")
    return name


class PEBank(Module):
    """Learnable positional table: one row per slice position at the canonical
    base length, plus row 0 for the volume classification token (never
    interpolated)."""

    def __init__(self, n_base: int, dim: int, rng: RngStream):
        if n_base < 2:
            raise ConfigError(f"PE bank needs a base length >= 2, got {n_base}")
        self.table = Param(
            rng.truncated_normal((n_base + 1, dim), 0.0, 0.02, -0.04, 0.04)
        )
        self.n_base = n_base


def interpolate_pe(bank: PEBank, n_dst: int) -> Tensor:
    """Resize the bank's slice rows to ``n_dst`` positions, align-corners.

    Row 0 (classification token) is copied through untouched. Differentiable
    into the bank, so training at resampled lengths still updates it.
    """
    if n_dst < 1:
        raise InvalidInputError(f"PE interpolation needs n_dst >= 1, got {n_dst}")
    cls_row = narrow(bank.table, 0, 0, 1)
    slice_rows = narrow(bank.table, 0, 1, bank.n_base)
    return concat([cls_row, interp_linear_rows(slice_rows, n_dst)], axis=0)


def sinusoidal_pe(n: int, dim: int) -> np.ndarray:
    """Fixed sin/cos table of shape (n + 1, dim); row 0 is the cls (j = 0) row."""
    if dim % 2:
        raise ConfigError(f"sinusoidal PE needs an even dimension, got {dim}")
    positions = np.arange(n + 1, dtype=np.float64)[:, None]
    freqs = 1.0 / 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((n + 1, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs)
    return table


def _renormalize_rows(rows: Tensor, bank_slice_rows: np.ndarray) -> Tensor:
    """Moment-match interpolated slice-PE rows to the bank's row statistics
    and clamp to two target stds. Statistics are treated as constants for the
    gradient, which keeps the map linear in the rows."""
    mu_target = float(bank_slice_rows.mean(axis=1).mean())
    sd_target = float(bank_slice_rows.std(axis=1).mean())
    m = rows.data.mean(axis=1, keepdims=True)
    s = np.maximum(rows.data.std(axis=1, keepdims=True), 1e-12)
    gain = sd_target / s
    out = add(mul(rows, Tensor(gain)), Tensor(mu_target - m * gain))
    return clip(out, mu_target - 2.0 * sd_target, mu_target + 2.0 * sd_target)


class FATAggregator(Module):
    """Transformer aggregator over slice embeddings with a volume cls token.

    ``pe_mode`` selects the positional signal: "learned" (interpolatable
    bank), "sinusoidal", or "none".
    """

    def __init__(
        self,
        dim: int,
        num_blocks: int,
        num_heads: int,
        rng: RngStream,
        pe_mode: str = "learned",
        n_base: int | None = None,
        mlp_ratio: float = 4.0,
        drop: float = 0.0,
        pe_renormalize: bool = False,
    ):
        if dim % num_heads:
            raise ConfigError(f"dim {dim} not divisible by num_heads {num_heads}")
        if pe_mode not in ("learned", "sinusoidal", "none"):
            raise ConfigError(f"unknown pe_mode {pe_mode!r}")
        if pe_mode == "learned" and n_base is None:
            raise ConfigError("learned positional mode requires a bank base length")
        self.vol_cls = trunc_normal_param((1, dim), rng)
        self.pe_bank = PEBank(n_base, dim, rng) if pe_mode == "learned" else None
        self.blocks = [
            Block(dim, num_heads, mlp_ratio, rng, drop) for _ in range(num_blocks)
        ]
        self.norm = LayerNorm(dim)
        self.pe_mode = pe_mode
        self.dim = dim
        self.drop = drop
        self.pe_renormalize = pe_renormalize

    def positional_table(self, n: int) -> Tensor | None:
        if self.pe_mode == "none":
            return None
        if self.pe_mode == "sinusoidal":
            return Tensor(sinusoidal_pe(n, self.dim))
        pe = interpolate_pe(self.pe_bank, n)
        if self.pe_renormalize:
            cls_row = narrow(pe, 0, 0, 1)
            rows = _renormalize_rows(
                narrow(pe, 0, 1, n), self.pe_bank.table.data[1:]
            )
            pe = concat([cls_row, rows], axis=0)
        return pe

    def __call__(
        self,
        slice_embs: Tensor,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        squeeze = slice_embs.ndim == 2
        x = reshape(slice_embs, (1, *slice_embs.shape)) if squeeze else slice_embs
        n = x.shape[1]
        if n < 1:
            raise InvalidInputError("aggregator needs at least one slice embedding")
        x = prepend_token(self.vol_cls, x)
        pe = self.positional_table(n)
        if pe is not None:
            x = add(x, pe)
        x = dropout(x, self.drop, rng, train_mode)
        for block in self.blocks:
            x = block(x, train_mode, rng)
        x = self.norm(x)
        out = reshape(narrow(x, 1, 0, 1), (x.shape[0], self.dim))
        return reshape(out, (self.dim,)) if squeeze else out


def aggregate_pool(slice_embs: Tensor, kind: str) -> Tensor:
    """Coordinatewise mean or max over the slice axis."""
    axis = slice_embs.ndim - 2
    if kind == AVG_POOL:
        return reduce_mean(slice_embs, axis=axis)
    if kind == MAX_POOL:
        return reduce_max(slice_embs, axis=axis)
    raise ConfigError(f"unknown pooling kind {kind!r}")


class Conv1DAggregator(Module):
    """Kernel-3, same-padded 1D convolution along the slice axis, then GELU
    and mean pooling over positions."""

    def __init__(self, dim: int, rng: RngStream):
        self.taps = Param(xavier_uniform((3, dim, dim), rng), decay=True)
        self.bias = Param(np.zeros(dim))
        self.dim = dim

    def __call__(self, slice_embs: Tensor) -> Tensor:
        squeeze = slice_embs.ndim == 2
        x = reshape(slice_embs, (1, *slice_embs.shape)) if squeeze else slice_embs
        b, n, d = x.shape
        pad = Tensor(np.zeros((b, 1, d)))
        padded = concat([pad, x, pad], axis=1)
        y = None
        for j in range(3):
            tap = reshape(narrow(self.taps, 0, j, 1), (d, d))
            term = matmul(narrow(padded, 1, j, n), tap)
            y = term if y is None else add(y, term)
        y = reduce_mean(gelu(add(y, self.bias)), axis=1)
        return reshape(y, (self.dim,)) if squeeze else y


def sample_length(schedule, rng: RngStream) -> int:
    """Uniform draw from a set of training lengths, independently per step."""
    values = sorted({int(v) for v in schedule})
    if not values:
        raise ConfigError("length schedule is empty")
    return values[int(rng.integers(0, len(values)))]
