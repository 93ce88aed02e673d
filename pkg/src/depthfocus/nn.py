"""Parameter containers and the small layer set used by the network."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class Parameter(Tensor):
    """A leaf tensor that is trained."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def uniform_fan_in(rng: np.random.Generator, shape: tuple, fan_in: int) -> Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Walks attributes in definition order to find parameters and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{path}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_fan_in(rng, (d_in, d_out), d_in)
        self.bias = uniform_fan_in(rng, (d_out,), d_in) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int | None = None):
        if k % 2 == 0 and padding is None:
            raise T.ConfigError(f"same padding needs an odd kernel, got {k}")
        fan_in = c_in * k * k
        self.weight = uniform_fan_in(rng, (c_out, c_in, k, k), fan_in)
        self.bias = uniform_fan_in(rng, (c_out,), fan_in)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class TransposeConv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 2):
        fan_in = c_in * k * k
        self.weight = uniform_fan_in(rng, (c_in, c_out, k, k), fan_in)
        self.bias = uniform_fan_in(rng, (c_out,), fan_in)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.transpose_conv2d(x, self.weight, self.bias, self.stride)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One gated step on row-stacked inputs. Gate column order: input, forget, candidate, output."""
    d_h = h.shape[-1]
    if w_x.shape != (x.shape[-1], 4 * d_h) or w_h.shape != (d_h, 4 * d_h) or b.shape != (4 * d_h,):
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h.shape} incompatible with w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
    if c.shape != h.shape:
        raise ShapeError(f"lstm_cell: cell {c.shape} != hidden {h.shape}")
    z = x @ w_x + h @ w_h + b
    i = T.sigmoid(z[..., 0 * d_h:1 * d_h])
    f = T.sigmoid(z[..., 1 * d_h:2 * d_h])
    g = T.tanh(z[..., 2 * d_h:3 * d_h])
    o = T.sigmoid(z[..., 3 * d_h:4 * d_h])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


class LSTMCell(Module):
    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        fan_in = d_in + d_h
        self.w_x = uniform_fan_in(rng, (d_in, 4 * d_h), fan_in)
        self.w_h = uniform_fan_in(rng, (d_h, 4 * d_h), fan_in)
        self.bias = uniform_fan_in(rng, (4 * d_h,), fan_in)

    def forward(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_cell(x, h, c, self.w_x, self.w_h, self.bias)
