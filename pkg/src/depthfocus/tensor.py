"""Dense numpy-backed tensors with reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output adjoint to parent adjoints.  Calling
:meth:`Tensor.backward` builds a :class:`Tape` (the reachable operations in
topological order) and replays the closures in reverse.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """Operation parameters cannot produce a well-defined output."""


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating) or arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff --------------------------------------------------------
    def backward(self, grad=None) -> "Tape":
        tape = Tape.from_root(self)
        tape.backward(grad)
        return tape

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return tabs(self)


class Tape:
    """Operations reachable from a root, in topological order (inputs first)."""

    def __init__(self, nodes: list[Tensor], root: Tensor):
        self.nodes = nodes
        self.root = root

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order, root)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, grad=None) -> None:
        root = self.root
        if grad is None:
            if root.size != 1:
                raise ShapeError(f"backward() needs an explicit seed for non-scalar output of shape {root.shape}")
            grad = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=root.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = (a if isinstance(a, Tensor) else _const(a, b)), (b if isinstance(b, Tensor) else _const(b, a))

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = (a if isinstance(a, Tensor) else _const(a, b)), (b if isinstance(b, Tensor) else _const(b, a))

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = (a if isinstance(a, Tensor) else _const(a, b)), (b if isinstance(b, Tensor) else _const(b, a))

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = (a if isinstance(a, Tensor) else _const(a, b)), (b if isinstance(b, Tensor) else _const(b, a))
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data ** exponent, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make((x * cdf).astype(x.dtype, copy=False), (a,), backward, "gelu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def tabs(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b``. ``mask`` is constant."""
    mask = np.asarray(mask, dtype=bool)
    a, b = (a if isinstance(a, Tensor) else _const(a, b)), (b if isinstance(b, Tensor) else _const(b, a))

    def backward(g):
        return _unbroadcast(np.where(mask, g, 0), a.shape), _unbroadcast(np.where(mask, 0, g), b.shape)

    return _make(np.where(mask, a.data, b.data), (a, b), backward, "where")


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays, not tensors")
    advanced = _is_advanced(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if advanced:
            np.add.at(out, index, g)
        else:
            out[index] += g
        return (out,)

    return _make(a.data[index], (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def scatter_rows(base: Tensor, rows: np.ndarray, values: Tensor) -> Tensor:
    """Copy of ``base`` with ``base[rows] = values`` (rows must be unique)."""
    rows = np.asarray(rows, dtype=np.int64)
    out = base.data.copy()
    out[rows] = values.data

    def backward(g):
        gb = g.copy()
        gb[rows] = 0
        return gb, g[rows]

    return _make(out, (base, values), backward, "scatter_rows")


def upsample_nearest(a: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the two trailing axes."""
    if factor == 1:
        return a
    out = a.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(g):
        shp = g.shape[:-2] + (a.shape[-2], factor, a.shape[-1], factor)
        return (g.reshape(shp).sum(axis=(-3, -1)),)

    return _make(out, (a,), backward, "upsample_nearest")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def _matmul_grads(g, a, b, need_a, need_b):
    ga = g @ np.swapaxes(b, -1, -2) if need_a else None
    gb = np.swapaxes(a, -1, -2) @ g if need_b else None
    return ga, gb


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        ga, gb = _matmul_grads(g, a.data, b.data, a.requires_grad, b.requires_grad)
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (population variance), then apply ``gain``/``bias``."""
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got shape {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = [x] + [p for p in (gain, bias) if p is not None]

    def backward(g):
        gx_hat = g * gain.data if gain is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(out, parents, backward, "layer_norm")


# ---------------------------------------------------------------------------
# Convolutions (cross-correlation convention, NCHW)
# ---------------------------------------------------------------------------

def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: size {n} with kernel {k}, stride {stride}, padding {padding} gives non-integral output")
    return span // stride + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Padded N×C×H×W -> (C·k·k) × (N·Ho·Wo), rows ordered (c, i, j) like a flattened weight."""
    n, c, h, w = xp.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, n * ho * wo)


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                  cols: np.ndarray | None = None) -> np.ndarray:
    n = x.shape[0]
    o, c, k, _ = w.shape
    ho = (x.shape[2] + 2 * padding - k) // stride + 1
    wo = (x.shape[3] + 2 * padding - k) // stride + 1
    if cols is None:
        cols = _im2col(_pad(x, padding), k, stride)
    out = w.reshape(o, -1) @ cols  # O × (N·Ho·Wo)
    return np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))


def _conv_transpose_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                            out_hw: tuple[int, int] | None = None) -> np.ndarray:
    # Adjoint of _conv_forward w.r.t. its input; w has shape (C_in_of_x, C_out, k, k).
    n, c, h, wd = x.shape
    k = w.shape[-1]
    if out_hw is None:
        out_hw = ((h - 1) * stride - 2 * padding + k, (wd - 1) * stride - 2 * padding + k)
    full_h = out_hw[0] + 2 * padding
    full_w = out_hw[1] + 2 * padding
    q = k - 1
    xp = np.zeros((n, c, full_h + q, full_w + q), dtype=x.dtype)
    xp[:, :, q:q + (h - 1) * stride + 1:stride, q:q + (wd - 1) * stride + 1:stride] = x
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    full = _conv_forward(xp, wf, 1, 0)
    if padding:
        full = full[:, :, padding:padding + out_hw[0], padding:padding + out_hw[1]]
    return np.ascontiguousarray(full)


def _conv_weight_grad(g: np.ndarray, cols: np.ndarray, w_shape: tuple) -> np.ndarray:
    o = g.shape[1]
    g2 = g.transpose(1, 0, 2, 3).reshape(o, -1)
    return (g2 @ cols.T).reshape(w_shape)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"conv input must be C×H×W or N×C×H×W, got {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (C,H,W) or (N,C,H,W); ``weight``: (O,C,k,k)."""
    x, squeeze = _batched(x)
    o, c, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"conv2d: square kernels only, got {weight.shape}")
    if c != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[1]} channels but weight {weight.shape} expects {c}")
    _out_size(x.shape[2], kh, stride, padding)
    _out_size(x.shape[3], kw, stride, padding)
    cols = _im2col(_pad(x.data, padding), kh, stride)
    out = _conv_forward(x.data, weight.data, stride, padding, cols)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    parents = [x, weight] + ([bias] if bias is not None else [])
    if not (_GRAD_ENABLED and weight.requires_grad):
        cols = None

    def backward(g):
        gx = _conv_transpose_forward(g, weight.data, stride, padding, x.shape[2:]) if x.requires_grad else None
        gw = _conv_weight_grad(g, cols, weight.shape) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    y = _make(out, parents, backward, "conv2d")
    return reshape(y, y.shape[1:]) if squeeze else y


def transpose_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution. ``weight``: (C_in, C_out, k, k); output size (H-1)*s - 2p + k."""
    x, squeeze = _batched(x)
    ci, co, kh, kw = weight.shape
    if kh != kw:
        raise ConfigError(f"transpose_conv2d: square kernels only, got {weight.shape}")
    if ci != x.shape[1]:
        raise ShapeError(f"transpose_conv2d: input {x.shape} has {x.shape[1]} channels but weight {weight.shape} expects {ci}")
    out_hw = tuple((n - 1) * stride - 2 * padding + kh for n in x.shape[2:])
    if min(out_hw) < 1:
        raise ConfigError(f"transpose_conv2d: empty output for input {x.shape}")
    out = _conv_transpose_forward(x.data, weight.data, stride, padding, out_hw)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        g_cols = _im2col(_pad(g, padding), kh, stride)
        gx = _conv_forward(g, weight.data, stride, padding, g_cols) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            # gw[ci, co, i, j] = sum x[n, ci, h, w] * gpad[n, co, h*s+i, w*s+j]
            co = weight.shape[1]
            x2 = x.data.transpose(1, 0, 2, 3).reshape(ci, -1)
            gw = (x2 @ g_cols.reshape(co * kh * kw, -1).T).reshape(ci, co, kh, kw)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    y = _make(out, parents, backward, "transpose_conv2d")
    return reshape(y, y.shape[1:]) if squeeze else y

