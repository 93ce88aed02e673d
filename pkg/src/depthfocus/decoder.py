"""Upsampling CNN decoder from fused tokens to a strictly positive disparity map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, TransposeConv2d
from .tensor import ConfigError, Tensor


@dataclass
class DecoderConfig:
    widths: tuple = (64, 32, 16, 8)
    disparity_floor: float = 1e-3

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if any(w < 1 for w in self.widths) or any(a <= b for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"decoder widths must be positive and decreasing: {self.widths}")


def tokens_to_grid(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """(..., k, d) -> (N, d, gh, gw); a missing leading axis becomes N=1."""
    if tokens.ndim == 2:
        tokens = tokens.reshape(1, *tokens.shape)
    n, k, d = tokens.shape
    if k != grid[0] * grid[1]:
        raise ConfigError(f"{k} tokens do not fill grid {grid}")
    return tokens.transpose(0, 2, 1).reshape(n, d, grid[0], grid[1])


class _Stage(Module):
    def __init__(self, c_in: int, width: int, skip_dim: int | None, rng: np.random.Generator):
        self.pre = Conv2d(c_in, width, 3, rng)
        self.up = TransposeConv2d(width, width, 2, rng, stride=2)
        self.skip = Conv2d(skip_dim, width, 1, rng) if skip_dim else None
        self.fuse = Conv2d(2 * width if skip_dim else width, width, 3, rng)

    def forward(self, x: Tensor, skip: Tensor | None) -> Tensor:
        x = self.up(T.gelu(self.pre(x)))
        if self.skip is not None:
            # a 1×1 projection commutes with nearest resizing, so project at token resolution
            factor = x.shape[-1] // skip.shape[-1]
            s = T.upsample_nearest(self.skip(skip), factor)
            x = T.concat([x, s], axis=1)
        return T.gelu(self.fuse(x))


class DepthDecoder(Module):
    """Token grid -> log2(P) stride-2 stages -> 1×1 head -> softplus + floor."""

    def __init__(self, d_m: int, patch_size: int, grid: tuple[int, int], config: DecoderConfig,
                 rng: np.random.Generator, num_skips: int = 3):
        stages = int(np.log2(patch_size))
        if 2 ** stages != patch_size:
            raise ConfigError(f"patch size {patch_size} must be a power of two")
        if stages > len(config.widths):
            raise ConfigError(f"{stages} upsampling stages need {stages} widths, got {config.widths}")
        if num_skips > stages:
            raise ConfigError(f"{num_skips} skips but only {stages} stages")
        self.grid = grid
        self.patch_size = patch_size
        self.floor = config.disparity_floor
        widths = config.widths[:stages]
        c_prev = d_m
        self.stages = []
        for i, w in enumerate(widths):
            self.stages.append(_Stage(c_prev, w, d_m if i < num_skips else None, rng))
            c_prev = w
        self.head = Conv2d(c_prev, 1, 1, rng)

    def forward(self, fused: Tensor, skips: list[Tensor]) -> Tensor:
        """``fused``: k×d (or n×k×d); ``skips``: matching token tensors. Returns H×W (or n×H×W)."""
        batched = fused.ndim == 3
        x = tokens_to_grid(fused, self.grid)
        skip_maps = [tokens_to_grid(s, self.grid) for s in skips]
        res = self.grid[0]
        for i, stage in enumerate(self.stages):
            x = stage(x, skip_maps[i] if stage.skip is not None else None)
            res *= 2
            if x.shape[-2] != res:
                raise ConfigError(f"stage {i} produced {x.shape[-2]} rows, expected {res}")
        disp = T.softplus(self.head(x)) + self.floor
        disp = disp.reshape(disp.shape[0], disp.shape[2], disp.shape[3])
        return disp if batched else disp.reshape(disp.shape[1], disp.shape[2])


def predict_depth(disparity, camera) -> np.ndarray:
    """Metric depth ``b*f / disparity``."""
    disparity = disparity.data if isinstance(disparity, Tensor) else np.asarray(disparity)
    if np.any(~(disparity > 0)):
        raise RuntimeError("disparity must be strictly positive; the decoder head guarantees this")
    return camera.baseline * camera.focal_length / disparity
