"""Recurrent fusion of per-frame tokens along the focal stack.

Tokens whose scaled L2 norm exceeds the threshold go through a stacked LSTM
with weights shared across positions; the rest are folded into a per-position
running mean.  The current frame's grouping decides which path emits each
output token.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import TokenSet
from .nn import Linear, LSTMCell, Module
from .tensor import Tensor

INF = float("inf")


class FusionError(ValueError):
    pass


@dataclass
class FusionConfig:
    threshold: float = 0.4
    lstm_hidden: int | None = None  # None -> embed dim
    lstm_layers: int = 2
    normalize_before_threshold: bool = True

    def __post_init__(self):
        if not self.threshold >= 0:
            raise FusionError(f"threshold must be >= 0, got {self.threshold}")
        if self.lstm_hidden is not None and self.lstm_hidden < 1:
            raise FusionError(f"lstm_hidden must be >= 1, got {self.lstm_hidden}")
        if self.lstm_layers < 1:
            raise FusionError(f"lstm_layers must be >= 1, got {self.lstm_layers}")


def scaled_norms(tokens: np.ndarray, normalize: bool = True) -> np.ndarray:
    norms = np.linalg.norm(np.asarray(tokens, dtype=np.float64), axis=-1)
    return norms / np.sqrt(tokens.shape[-1]) if normalize else norms


def group_tokens(tokens: TokenSet | Tensor | np.ndarray, config: FusionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Indices of activated tokens (scaled norm strictly above threshold) and the rest."""
    if isinstance(tokens, TokenSet):
        tokens = tokens.tokens
    if isinstance(tokens, Tensor):
        tokens = tokens.data
    active = scaled_norms(tokens, config.normalize_before_threshold) > config.threshold
    return np.flatnonzero(active), np.flatnonzero(~active)


@dataclass
class FusionState:
    h: list[Tensor]
    c: list[Tensor]
    avg: Tensor
    counts: np.ndarray
    frames_seen: int = 0

    @classmethod
    def initial(cls, k: int, d_m: int, d_h: int, layers: int, dtype=np.float32) -> "FusionState":
        zeros = lambda d: Tensor(np.zeros((k, d), dtype=dtype), dtype=dtype)  # noqa: E731
        return cls(h=[zeros(d_h) for _ in range(layers)], c=[zeros(d_h) for _ in range(layers)],
                   avg=zeros(d_m), counts=np.zeros(k, dtype=np.int64))

    @property
    def k(self) -> int:
        return self.avg.shape[0]

    def nbytes(self) -> int:
        arrays = [t.data for t in self.h + self.c] + [self.avg.data, self.counts]
        return int(sum(a.nbytes for a in arrays))


class StackFusion(Module):
    def __init__(self, d_m: int, config: FusionConfig, rng: np.random.Generator):
        self.config = config
        self.d_m = d_m
        self.d_h = config.lstm_hidden or d_m
        dims = [d_m] + [self.d_h] * config.lstm_layers
        self.cells = [LSTMCell(dims[i], dims[i + 1], rng) for i in range(config.lstm_layers)]
        self.proj = Linear(self.d_h, d_m, rng) if self.d_h != d_m else None

    def initial_state(self, k: int, dtype=np.float32) -> FusionState:
        return FusionState.initial(k, self.d_m, self.d_h, len(self.cells), dtype)

    def recur(self, x: Tensor, h: list[Tensor], c: list[Tensor]) -> tuple[Tensor, list[Tensor], list[Tensor]]:
        """Run the LSTM stack on rows of ``x``; returns (output, new h per layer, new c per layer)."""
        hs, cs = [], []
        for cell, h_l, c_l in zip(self.cells, h, c):
            x, c_new = cell(x, h_l, c_l)
            hs.append(x)
            cs.append(c_new)
        out = self.proj(x) if self.proj is not None else x
        return out, hs, cs

    def fuse_step(self, state: FusionState, tokens: TokenSet | Tensor) -> tuple[FusionState, Tensor]:
        if isinstance(tokens, TokenSet):
            tokens = tokens.tokens
        if tokens.shape != (state.k, self.d_m):
            raise FusionError(f"tokens {tokens.shape} do not match fusion state geometry {(state.k, self.d_m)}")
        active, rest = group_tokens(tokens, self.config)
        h, c, avg, counts = list(state.h), list(state.c), state.avg, state.counts.copy()
        parts, order = [], []

        if active.size:
            x = tokens[active]
            out, hs, cs = self.recur(x, [t[active] for t in h], [t[active] for t in c])
            h = [T.scatter_rows(old, active, new) for old, new in zip(h, hs)]
            c = [T.scatter_rows(old, active, new) for old, new in zip(c, cs)]
            parts.append(out)
            order.append(active)
        if rest.size:
            n_prev = counts[rest].astype(tokens.dtype)[:, None]
            updated = (avg[rest] * n_prev + tokens[rest]) / (n_prev + 1.0)
            avg = T.scatter_rows(avg, rest, updated)
            counts[rest] += 1
            parts.append(updated)
            order.append(rest)

        perm = np.concatenate(order)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        merged = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
        output = merged if np.array_equal(perm, np.arange(perm.size)) else merged[inverse]
        new_state = FusionState(h=h, c=c, avg=avg, counts=counts, frames_seen=state.frames_seen + 1)
        return new_state, output

    def fuse_stack(self, frame_tokens: Sequence[TokenSet | Tensor] | Tensor,
                   return_state: bool = False):
        """Fold :meth:`fuse_step` over frames in the given (ascending focus) order."""
        if isinstance(frame_tokens, Tensor):
            frames = [frame_tokens[i] for i in range(frame_tokens.shape[0])]
        else:
            frames = list(frame_tokens)
        if not frames:
            raise FusionError("cannot fuse an empty stack")
        first = frames[0].tokens if isinstance(frames[0], TokenSet) else frames[0]
        state = self.initial_state(first.shape[0], first.dtype)
        out = None
        for tokens in frames:
            state, out = self.fuse_step(state, tokens)
        return (out, state) if return_state else out
