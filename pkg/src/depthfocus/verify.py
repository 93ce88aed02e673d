"""Self-check suite: gradient checks, metric oracles, optics identities, fusion reductions.

Each check returns ``(passed, worst)`` where ``worst`` describes the worst case
seen.  :func:`run_checks` times every check and never stops at the first failure.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from . import tensor as T
from .encoder import EncoderConfig
from .fusion import INF, FusionConfig, StackFusion
from .gradcheck import grad_check
from .metrics import compute_metrics
from .model import FocusDepthNet, ModelConfig
from .nn import lstm_cell
from .optics import CameraModel, Scene, coc_diameter, coc_sigma_px, render_frame
from .tensor import Tensor

OP_TOLERANCE = 1e-4
GRAPH_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    module: str
    name: str
    passed: bool
    worst: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.module:<12} {self.name:<28} {self.seconds:7.2f}s  {self.worst}"


def _t(shape, rng, lo=-1.0, hi=1.0, grad=True) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=grad, dtype=np.float64)


def _projected(y: Tensor, seed: int = 0) -> Tensor:
    r = np.random.default_rng(seed).uniform(-1, 1, y.shape)
    return (y * Tensor(r, dtype=y.dtype)).sum()


def _gc(f, inputs, tol=OP_TOLERANCE, **kw):
    report = grad_check(f, inputs, tolerance=tol, **kw)
    return report.passed, f"max rel err {report.max_error:.2e} at {report.worst_path}{list(report.worst_index or ())}"


# -- tensor core ---------------------------------------------------------------

def _op_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    def unary(fn, lo=-1.0, hi=1.0):
        def case(rng):
            x = _t((3, 4), rng, lo, hi)
            return lambda: _projected(fn(x)), [x]
        return case

    def matmul(rng):
        a, b = _t((3, 4), rng), _t((4, 2), rng)
        return lambda: (a @ b).sum(), {"a": a, "b": b}

    def conv(rng):
        x, w, b = _t((2, 9, 9), rng), _t((3, 2, 3, 3), rng), _t((3,), rng)
        return lambda: _projected(T.conv2d(x, w, b, stride=2, padding=1)), {"x": x, "w": w, "b": b}

    def tconv(rng):
        x, w, b = _t((2, 3, 3), rng), _t((2, 3, 2, 2), rng), _t((3,), rng)
        return lambda: _projected(T.transpose_conv2d(x, w, b, stride=2)), {"x": x, "w": w, "b": b}

    def softmax(rng):
        x = _t((5,), rng)
        return lambda: _projected(T.softmax(x, 0)), [x]

    def layer_norm(rng):
        x, g, b = _t((3, 6), rng), _t((6,), rng, 0.5, 1.5), _t((6,), rng)
        return lambda: _projected(T.layer_norm(x, g, b)), {"x": x, "gain": g, "bias": b}

    def lstm(rng):
        wx, wh, b = _t((3, 16), rng, -0.5, 0.5), _t((4, 16), rng, -0.5, 0.5), _t((16,), rng, -0.5, 0.5)
        xs = _t((3, 2, 3), rng)

        def f():
            h = c = Tensor(np.zeros((2, 4)), dtype=np.float64)
            for i in range(3):
                h, c = lstm_cell(xs[i], h, c, wx, wh, b)
            return _projected(h) + c.sum()
        return f, {"w_x": wx, "w_h": wh, "b": b, "x": xs}

    def structural(rng):
        x = _t((2, 3, 4), rng)
        idx = np.array([2, 0, 2])

        def f():
            y = T.concat([x, x * 2.0], axis=2).transpose(0, 2, 1).reshape(2, 24)
            z = T.stack([y, -y], axis=0)[:, :, idx].sum(axis=1)
            up = T.upsample_nearest(x.reshape(1, 2, 3, 4), 2)
            rows = T.scatter_rows(x.reshape(6, 4), np.array([1, 4]), x.reshape(6, 4)[np.array([0, 0])] * 3.0)
            return _projected(z) + _projected(up, 1) + _projected(rows, 2) + x.mean()
        return f, [x]

    return {
        "matmul": matmul, "conv2d": conv, "transpose_conv2d": tconv, "softmax": softmax,
        "layer_norm": layer_norm, "lstm_cell x3": lstm, "structural ops": structural,
        "gelu": unary(T.gelu), "softplus": unary(T.softplus), "tanh": unary(T.tanh),
        "sigmoid": unary(T.sigmoid), "exp": unary(T.exp), "log": unary(T.log, 0.5, 2.0),
        "abs": unary(T.tabs), "div/pow": unary(lambda x: (x * x + 1.0) ** 1.5 / (x * x + 2.0)),
    }


def _tensor_checks() -> list[tuple[str, str, Callable]]:
    checks = []
    for name, case in _op_cases().items():
        def run(case=case):
            f, inputs = case(np.random.default_rng(0))
            return _gc(f, inputs)
        checks.append(("tensor-core", f"grad {name}", run))

    def adjoint():
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x, w = rng.uniform(-1, 1, (2, 2, 7, 7)), rng.uniform(-1, 1, (3, 2, 3, 3))
            cx = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
            y = rng.uniform(-1, 1, cx.shape)
            ty = T.transpose_conv2d(Tensor(y), Tensor(w), stride=2, padding=1).data
            worst = max(worst, abs(float(np.sum(cx * y) - np.sum(x * ty))))
        return worst < 1e-5, f"max |<conv x, y> - <x, conv^T y>| = {worst:.2e}"
    checks.append(("tensor-core", "conv adjoint identity", adjoint))
    return checks


# -- end-to-end graph -------------------------------------------------------------

def toy_graph_config() -> ModelConfig:
    enc = EncoderConfig(patch_size=16, embed_dim=16, num_heads=2, num_blocks=4)
    return ModelConfig(image_size=32, encoder=enc)


def _graph_check():
    model = FocusDepthNet(toy_graph_config(), seed=0).astype(np.float64)
    frames = np.random.default_rng(1).uniform(0, 1, (3, 32, 32, 3))
    r = Tensor(np.random.default_rng(2).uniform(-1, 1, (32, 32)), dtype=np.float64)
    return _gc(lambda: (model(frames) * r).sum(), dict(model.named_parameters()), tol=GRAPH_TOLERANCE,
               max_per_tensor=4, rng=np.random.default_rng(3))


# -- metrics ----------------------------------------------------------------------

def loop_metrics(pred: np.ndarray, gt: np.ndarray) -> list[float]:
    """Scalar-loop reference for the eight metrics (full mask)."""
    h, w = gt.shape
    n = h * w
    delta = [[float(pred[i, j] - gt[i, j]) for j in range(w)] for i in range(h)]

    def d2(i, j, axis):
        if axis == 1:
            c = min(max(j, 1), w - 2)
            return delta[i][c + 1] - 2 * delta[i][c] + delta[i][c - 1]
        c = min(max(i, 1), h - 2)
        return delta[c + 1][j] - 2 * delta[c][j] + delta[c - 1][j]

    def d1(a, i, j, axis):
        if axis == 1:
            lo, hi = max(j - 1, 0), min(j + 1, w - 1)
            return (a[i][hi] - a[i][lo]) / (hi - lo)
        lo, hi = max(i - 1, 0), min(i + 1, h - 1)
        return (a[hi][j] - a[lo][j]) / (hi - lo)

    dx = [[d1(delta, i, j, 1) for j in range(w)] for i in range(h)]
    totals = [0.0] * 5
    acc = [0, 0, 0]
    for i in range(h):
        for j in range(w):
            p, g = float(pred[i, j]), float(gt[i, j])
            e = p - g
            hxx, hyy, hxy = d2(i, j, 1), d2(i, j, 0), d1(dx, i, j, 0)
            totals[0] += e * e
            totals[1] += (math.log(p) - math.log(g)) ** 2
            totals[2] += abs(e) / g
            totals[3] += e * e / g
            totals[4] += min(0.05, math.sqrt(hxx * hxx + 2 * hxy * hxy + hyy * hyy))
            ratio = max(p / g, g / p)
            for t in range(3):
                acc[t] += ratio < 1.25 ** (t + 1)
    return [math.sqrt(totals[0] / n), math.sqrt(totals[1] / n), totals[2] / n, totals[3] / n,
            100 * totals[4] / n] + [100 * a / n for a in acc]


def _metric_check(cases: int = 100):
    worst, worst_seed, ordered = 0.0, None, True
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(0.2, 2.0, (16, 16))
        pred = gt * rng.uniform(0.5, 2.0, (16, 16))
        report = compute_metrics(pred, gt)
        err = float(np.max(np.abs(np.array(report.as_row()) - loop_metrics(pred, gt))))
        if err > worst:
            worst, worst_seed = err, seed
        ordered &= report.acc_1 <= report.acc_2 <= report.acc_3 and report.bump <= 5.0
    return worst < 1e-9 and ordered, f"max |metric - loop| = {worst:.2e} (seed {worst_seed}); ordering ok={ordered}"


# -- optics -----------------------------------------------------------------------

def _coc_identity():
    cam = CameraModel()
    z, d_f = np.meshgrid(np.linspace(0.55, 5.0, 10), np.linspace(0.5, 4.95, 10))
    z, d_f = z.ravel(), d_f.ravel()
    c = coc_diameter(cam, d_f, z)
    rhs = cam.focal_length ** 2 * np.sign(z - d_f)
    rel = np.abs(c * cam.f_number * z - rhs) / np.abs(rhs)
    i = int(np.argmax(rel))
    return bool(rel[i] <= 1e-12), f"max rel err {rel[i]:.2e} at z={z[i]:.3f}, d_f={d_f[i]:.3f}"


def _constant_depth_render():
    cam = CameraModel()
    img = np.random.default_rng(0).uniform(0, 1, (32, 32, 3))
    scene = Scene(img, np.full((32, 32), 4.0))
    sigma = coc_sigma_px(cam, 0.6, 4.0)
    err = float(np.max(np.abs(render_frame(scene, cam, 0.6) - ndimage.gaussian_filter(img, (sigma, sigma, 0), mode="reflect", truncate=3.0))))
    sharp = float(np.max(np.abs(render_frame(scene, cam, 4.0) - img)))
    return err < 1e-5 and sharp < 1e-6, f"blurred max err {err:.2e} (sigma {sigma:.2f} px); in-focus max err {sharp:.2e}"


# -- fusion -----------------------------------------------------------------------

def _fusion(threshold: float, seed: int = 0) -> StackFusion:
    return StackFusion(8, FusionConfig(threshold=threshold), np.random.default_rng(seed)).astype(np.float64)


def _fusion_mean():
    worst = 0.0
    for seed in range(10):
        x = np.random.default_rng(seed).uniform(-3, 3, (3, 5, 8))
        out = _fusion(INF, seed).fuse_stack(Tensor(x, dtype=np.float64)).data
        worst = max(worst, float(np.max(np.abs(out - x.mean(axis=0)))))
    return worst < 1e-6, f"max |fused - mean| = {worst:.2e}"


def _fusion_all_active():
    x = np.random.default_rng(1).uniform(-1, 1, (3, 5, 8))
    _, state = _fusion(0.0).fuse_stack(Tensor(x, dtype=np.float64), return_state=True)
    moved = float(np.max(np.abs(state.avg.data)))
    return moved == 0.0 and int(state.counts.sum()) == 0, f"max |cached avg| = {moved:.2e}, counts {state.counts.tolist()}"


# -- driver -----------------------------------------------------------------------

def all_checks(include_graph: bool = True) -> list[tuple[str, str, Callable]]:
    checks = _tensor_checks()
    if include_graph:
        checks.append(("graph", "encoder-fusion-decoder grad", _graph_check))
    checks += [
        ("loss-metrics", "loop oracle x100", _metric_check),
        ("optics", "coc identity", _coc_identity),
        ("optics", "constant-depth render", _constant_depth_render),
        ("fusion", "tau=inf running mean", _fusion_mean),
        ("fusion", "tau=0 averages untouched", _fusion_all_active),
    ]
    return checks


def run_checks(checks=None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    results = []
    with T.precision(np.float64):
        for module, name, fn in checks if checks is not None else all_checks():
            start = time.perf_counter()
            try:
                passed, worst = fn()
            except Exception as exc:  # a crash is a failure of that check, not of the suite
                passed, worst = False, f"raised {type(exc).__name__}: {exc}"
            result = CheckResult(module, name, bool(passed), worst, time.perf_counter() - start)
            results.append(result)
            if echo:
                echo(result.line())
    return results
