"""ViT slice encoder: maps one 2D slice to a d-dimensional embedding.

Slices are cut into non-overlapping square patches, linearly projected,
prefixed with a learnable classification token, offset by a learnable patch
positional table, and run through pre-norm transformer blocks. The final
normed state at the classification position is the slice embedding. All
slices of a volume share the same weights, so volumes are encoded as one
batched pass with no cross-slice interaction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, dropout, narrow, reshape
from .errors import ConfigError, ShapeError
from .layers import (
    Block,
    LayerNorm,
    Linear,
    Module,
    prepend_token,
    trunc_normal_param,
)
from .rng import RngStream


@dataclass(frozen=True)
class EncoderConfig:
    image_size: tuple[int, int] = (32, 32)
    patch_size: int = 8
    embed_dim: int = 32
    num_blocks: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.0

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def num_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    def param_count(self) -> int:
        """Closed-form trainable parameter count.

        proj (p^2*d + d) + cls (d) + patch PE ((P+1)*d) + final norm (2d)
        + per block: 2 norms (4d) + attention (4*(d^2+d)) + mlp
        (d*hidden + hidden + hidden*d + d), hidden = int(d*mlp_ratio).
        """
        d, p = self.embed_dim, self.patch_size
        hidden = int(d * self.mlp_ratio)
        block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden + hidden * d + d)
        return (p * p * d + d) + d + (self.num_patches + 1) * d + self.num_blocks * block + 2 * d


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut (..., H, W) into (..., num_patches, patch_size^2) in raster order.

    Patches are non-overlapping and each is flattened row-major.
    """
    arr = np.asarray(image, dtype=np.float64)
    h, w = arr.shape[-2:]
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image dims ({h}, {w}) not divisible by patch size {p}")
    lead = arr.shape[:-2]
    grid = arr.reshape(*lead, h // p, p, w // p, p)
    axes = tuple(range(len(lead))) + tuple(
        len(lead) + k for k in (0, 2, 1, 3)
    )
    return grid.transpose(axes).reshape(*lead, (h // p) * (w // p), p * p)


class SliceEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: RngStream):
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_proj = Linear(cfg.patch_size**2, d, rng)
        self.cls_token = trunc_normal_param((1, d), rng)
        self.patch_pe = trunc_normal_param((cfg.num_patches + 1, d), rng)
        self.blocks = [
            Block(d, cfg.num_heads, cfg.mlp_ratio, rng, cfg.dropout)
            for _ in range(cfg.num_blocks)
        ]
        self.norm = LayerNorm(d)

    def _check_dims(self, shape) -> None:
        if tuple(shape[-2:]) != tuple(self.cfg.image_size):
            raise ShapeError(
                f"slice dims {tuple(shape[-2:])} do not match config {self.cfg.image_size}"
            )

    def encode_stack(
        self,
        stack: np.ndarray,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        """Encode (m, H, W) slices into (m, d) embeddings in one batched pass."""
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3:
            raise ShapeError(f"expected a rank-3 slice stack, got shape {stack.shape}")
        self._check_dims(stack.shape)
        m = stack.shape[0]
        tokens = self.patch_proj(Tensor(patchify(stack, self.cfg.patch_size)))
        x = prepend_token(self.cls_token, tokens)
        x = add(x, self.patch_pe)
        x = dropout(x, self.cfg.dropout, rng, train_mode)
        for block in self.blocks:
            x = block(x, train_mode, rng)
        x = self.norm(x)
        return reshape(narrow(x, 1, 0, 1), (m, self.cfg.embed_dim))

    def encode_slice(
        self,
        image: np.ndarray,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        """Embed a single (H, W) slice; returns shape (d,)."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ShapeError(f"expected a rank-2 slice, got shape {image.shape}")
        out = self.encode_stack(image[None], train_mode, rng)
        return reshape(out, (self.cfg.embed_dim,))

    def encode_volume(
        self,
        slices: np.ndarray,
        train_mode: bool = False,
        rng: RngStream | None = None,
    ) -> Tensor:
        """Embed an (n, H, W) volume as (n, d); row order follows slice order."""
        return self.encode_stack(slices, train_mode, rng)
