"""Per-frame feature extraction: multi-scale conv stem, patch tokens, transformer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module, uniform_fan_in
from .tensor import ConfigError, Tensor


@dataclass
class EncoderConfig:
    patch_size: int = 16
    embed_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 4
    mlp_ratio: int = 4
    multiscale_kernels: tuple = (3, 5, 7)
    branch_channels: int = 8
    merge_channels: int = 8
    skip_block_indices: tuple = (1, 2, 3)  # 1-based block outputs used as g_1..g_3
    use_depth_conv: bool = True
    position_embedding: bool = True
    global_token: bool = True

    def __post_init__(self):
        self.multiscale_kernels = tuple(self.multiscale_kernels)
        self.skip_block_indices = tuple(self.skip_block_indices)
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if any(k % 2 == 0 for k in self.multiscale_kernels):
            raise ConfigError(f"multiscale kernels must be odd: {self.multiscale_kernels}")
        if any(not 1 <= i <= self.num_blocks for i in self.skip_block_indices):
            raise ConfigError(f"skip_block_indices {self.skip_block_indices} outside 1..{self.num_blocks}")


@dataclass
class TokenSet:
    """Tokens of one frame in row-major patch order."""

    tokens: Tensor  # k × d_m
    grid: tuple[int, int]
    _norms: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        k = self.grid[0] * self.grid[1]
        if self.tokens.ndim != 2 or self.tokens.shape[0] != k:
            raise ConfigError(f"TokenSet: tokens {self.tokens.shape} do not fit grid {self.grid}")

    @property
    def k(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def norms(self) -> np.ndarray:
        if self._norms is None:
            self._norms = np.linalg.norm(self.tokens.data.astype(np.float64), axis=-1)
        return self._norms


def check_geometry(H: int, W: int, patch_size: int) -> tuple[int, int]:
    if H % patch_size or W % patch_size:
        raise ConfigError(f"image {H}×{W} is not divisible into {patch_size}×{patch_size} patches")
    return H // patch_size, W // patch_size


class MultiscaleEncoder(Module):
    """Parallel same-padded convs, channel concat, 3×3 merge, 1×1 squeeze to one channel."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        c = config.branch_channels
        self.branches = [Conv2d(3, c, k, rng) for k in config.multiscale_kernels]
        self.use_depth_conv = config.use_depth_conv
        if config.use_depth_conv:
            self.merge = Conv2d(c * len(config.multiscale_kernels), config.merge_channels, 3, rng)
            self.squeeze = Conv2d(config.merge_channels, 1, 1, rng)
        self.patch_size = config.patch_size

    def forward(self, images: Tensor) -> Tensor:
        # images: n×3×H×W -> n×1×H×W
        check_geometry(images.shape[-2], images.shape[-1], self.patch_size)
        feats = T.concat([T.gelu(b(images)) for b in self.branches], axis=1)
        if not self.use_depth_conv:
            return feats.mean(axis=1, keepdims=True)
        return self.squeeze(T.gelu(self.merge(feats)))


class Tokenizer(Module):
    """Linear patch embedding plus an additive global token and learned positions."""

    def __init__(self, config: EncoderConfig, grid: tuple[int, int], rng: np.random.Generator):
        p2 = config.patch_size ** 2
        d = config.embed_dim
        self.patch_size = config.patch_size
        self.grid = grid
        self.embed = Linear(p2, d, rng)
        self.global_embed = Linear(p2, d, rng) if config.global_token else None
        k = grid[0] * grid[1]
        self.position = uniform_fan_in(rng, (k, d), d) if config.position_embedding else None

    def patches(self, feature: Tensor) -> Tensor:
        n, _, H, W = feature.shape
        gh, gw = check_geometry(H, W, self.patch_size)
        if (gh, gw) != self.grid:
            raise ConfigError(f"feature map grid {(gh, gw)} != tokenizer grid {self.grid}")
        P = self.patch_size
        x = feature.reshape(n, gh, P, gw, P).transpose(0, 1, 3, 2, 4)
        return x.reshape(n, gh * gw, P * P)

    def forward(self, feature: Tensor) -> Tensor:
        patches = self.patches(feature)
        tokens = self.embed(patches)
        if self.global_embed is not None:
            pooled = patches.mean(axis=1, keepdims=True)  # mean patch = pooled P×P map
            tokens = tokens + self.global_embed(pooled)
        if self.position is not None:
            tokens = tokens + self.position
        return tokens


class MultiHeadAttention(Module):
    def __init__(self, d: int, num_heads: int, rng: np.random.Generator):
        self.num_heads = num_heads
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, k, d = x.shape
        h = self.num_heads
        x = x.reshape(*lead, k, h, d // h)
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        return x.transpose(axes)

    def forward(self, x: Tensor) -> Tensor:
        *lead, k, d = x.shape
        q, key, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_v(x))
        nd = q.ndim
        key_t = key.transpose(list(range(nd - 2)) + [nd - 1, nd - 2])
        scores = (q @ key_t) * float(1.0 / np.sqrt(d // self.num_heads))
        attn = T.softmax(scores, axis=-1)
        self.last_attention = attn.data
        heads = attn @ v  # ..., h, k, d_head
        axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
        merged = heads.transpose(axes).reshape(*lead, k, d)
        return self.w_o(merged)


class TransformerBlock(Module):
    def __init__(self, d: int, num_heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, num_heads, rng)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, mlp_ratio * d, rng)
        self.fc2 = Linear(mlp_ratio * d, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(T.gelu(self.fc1(self.norm2(x))))


class TransformerEncoder(Module):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.blocks = [TransformerBlock(d, config.num_heads, config.mlp_ratio, rng) for _ in range(config.num_blocks)]
        self.skip_block_indices = config.skip_block_indices

    def forward(self, tokens: Tensor) -> tuple[Tensor, list[Tensor]]:
        skips = []
        x = tokens
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i in self.skip_block_indices:
                skips.append(x)
        return x, skips

    @property
    def last_attention(self) -> np.ndarray | None:
        return self.blocks[-1].attn.last_attention


class FocusEncoder(Module):
    """Frames (n×3×H×W) -> final tokens (n×k×d) and skip tokens [g_1, g_2, g_3]."""

    def __init__(self, config: EncoderConfig, image_size: tuple[int, int], rng: np.random.Generator):
        self.config = config
        self.grid = check_geometry(image_size[0], image_size[1], config.patch_size)
        self.stem = MultiscaleEncoder(config, rng)
        self.tokenizer = Tokenizer(config, self.grid, rng)
        self.transformer = TransformerEncoder(config, rng)

    def forward(self, images: Tensor) -> tuple[Tensor, list[Tensor]]:
        return self.transformer(self.tokenizer(self.stem(images)))
