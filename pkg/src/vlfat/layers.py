"""Transformer building blocks shared by the slice encoder and the aggregator.

Parameter containers are tiny Module classes; ``named_parameters`` walks
attributes in declaration order, which fixes the flat checkpoint layout.
Weight decay applies only to parameters tagged ``decay=True`` (the rank-2
linear maps); biases, norms, tokens, and positional tables are exempt.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterator

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    dropout,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)
from .rng import RngStream

TRUNC_STD = 0.02  # token/PE init: truncated normal, clipped at +-2 std


class Param(Tensor):
    """Trainable tensor; ``decay`` marks it for weight decay."""

    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.decay = decay


class Module:
    """Base for parameter containers; children discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Param):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> Iterator[Param]:
        for _, p in self.named_parameters():
            yield p

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def trunc_normal_param(shape, rng: RngStream, std: float = TRUNC_STD) -> Param:
    return Param(rng.truncated_normal(shape, 0.0, std, -2.0 * std, 2.0 * std))


def xavier_uniform(shape, rng: RngStream) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: RngStream):
        self.weight = Param(xavier_uniform((d_in, d_out), rng), decay=True)
        self.bias = Param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Param(np.ones(dim))
        self.bias = Param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


_attn_trace: list[np.ndarray] | None = None


@contextmanager
def record_attention():
    """Collect every attention-probability array produced inside the block."""
    global _attn_trace
    previous, _attn_trace = _attn_trace, []
    try:
        yield _attn_trace
    finally:
        _attn_trace = previous


class MultiHeadAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: RngStream, drop: float = 0.0):
        assert dim % num_heads == 0
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.drop = drop

    def __call__(self, x: Tensor, train_mode: bool, rng: RngStream | None) -> Tensor:
        m, t, d = x.shape
        h, hd = self.num_heads, self.head_dim

        def split_heads(v: Tensor) -> Tensor:
            return transpose(reshape(v, (m, t, h, hd)), (0, 2, 1, 3))

        q = split_heads(self.wq(x))
        k = split_heads(self.wk(x))
        v = split_heads(self.wv(x))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
        probs = softmax(scores, axis=-1)
        if _attn_trace is not None:
            _attn_trace.append(probs.data.copy())
        probs = dropout(probs, self.drop, rng, train_mode)
        mixed = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)), (m, t, d))
        return dropout(self.wo(mixed), self.drop, rng, train_mode)


class Mlp(Module):
    def __init__(self, dim: int, mlp_ratio: float, rng: RngStream, drop: float = 0.0):
        hidden = int(dim * mlp_ratio)
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.drop = drop

    def __call__(self, x: Tensor, train_mode: bool, rng: RngStream | None) -> Tensor:
        return dropout(self.fc2(gelu(self.fc1(x))), self.drop, rng, train_mode)


class Block(Module):
    """Pre-norm transformer block: x + MSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(
        self, dim: int, num_heads: int, mlp_ratio: float, rng: RngStream, drop: float = 0.0
    ):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, num_heads, rng, drop)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio, rng, drop)

    def __call__(self, x: Tensor, train_mode: bool, rng: RngStream | None) -> Tensor:
        x = add(x, self.attn(self.norm1(x), train_mode, rng))
        return add(x, self.mlp(self.norm2(x), train_mode, rng))


def tile_token(token: Tensor, count: int) -> Tensor:
    """Repeat a (1, d) token ``count`` times, keeping gradients flowing to it."""
    ones = Tensor(np.ones((count, 1)))
    return matmul(ones, token)


def prepend_token(token: Tensor, x: Tensor) -> Tensor:
    """Prepend a (1, d) token to every sequence of a (m, t, d) batch."""
    m = x.shape[0]
    tiled = reshape(tile_token(token, m), (m, 1, x.shape[2]))
    return concat([tiled, x], axis=1)
