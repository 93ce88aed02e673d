"""Training loss and the evaluation metric suite."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .optics import DomainError
from .tensor import ShapeError, Tensor

LOSS_VARIANTS = ("mse", "mae", "mse+grad")
METRIC_COLUMNS = ("rmse", "log_rmse", "abs_rel", "sqr_rel", "bump", "acc_1", "acc_2", "acc_3")
DELTA_THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)
BUMP_CLAMP = 0.05


@dataclass
class LossConfig:
    alpha: float = 0.2
    variant: str = "mse+grad"

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.variant not in LOSS_VARIANTS:
            raise ValueError(f"loss variant must be one of {LOSS_VARIANTS}, got {self.variant!r}")


def gradient_loss(diff: Tensor) -> Tensor:
    """Mean |forward difference| along x plus along y, each over its defined pairs."""
    total = None
    if diff.shape[-1] > 1:
        total = T.tabs(diff[..., :, 1:] - diff[..., :, :-1]).mean()
    if diff.shape[-2] > 1:
        gy = T.tabs(diff[..., 1:, :] - diff[..., :-1, :]).mean()
        total = gy if total is None else total + gy
    return total if total is not None else diff.sum() * 0.0


def total_loss(pred: Tensor, gt, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt), dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs ground truth {gt.shape}")
    diff = pred - gt
    if config.variant == "mae":
        return T.tabs(diff).mean()
    loss = (diff * diff).mean()
    if config.variant == "mse+grad" and config.alpha > 0:
        loss = loss + gradient_loss(diff) * config.alpha
    return loss


@dataclass
class MetricsReport:
    rmse: float
    log_rmse: float
    abs_rel: float
    sqr_rel: float
    bump: float
    acc_1: float
    acc_2: float
    acc_3: float

    def as_row(self) -> list[float]:
        return [getattr(self, c) for c in METRIC_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([repr(v) for v in self.as_row()])
        return buf.getvalue()

    @staticmethod
    def csv_header() -> str:
        return ",".join(METRIC_COLUMNS) + "\n"

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        return cls(*[float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(cls)])


def _second_difference(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    if n < 3:
        return np.zeros_like(a)
    a = np.moveaxis(a, axis, 0)
    d2 = np.empty_like(a)
    d2[1:-1] = a[2:] - 2 * a[1:-1] + a[:-2]
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return np.moveaxis(d2, 0, axis)


def _first_difference(a: np.ndarray, axis: int) -> np.ndarray:
    if a.shape[axis] < 2:
        return np.zeros_like(a)
    return np.gradient(a, axis=axis)


def hessian_frobenius(delta: np.ndarray) -> np.ndarray:
    """Per-pixel Frobenius norm of the 2×2 Hessian from central second differences."""
    dxx = _second_difference(delta, 1)
    dyy = _second_difference(delta, 0)
    dxy = _first_difference(_first_difference(delta, 1), 0)
    return np.sqrt(dxx ** 2 + 2 * dxy ** 2 + dyy ** 2)


def compute_metrics(pred, gt, mask=None) -> MetricsReport:
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"metrics need matching H×W maps, got {pred.shape} and {gt.shape}")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DomainError("metric mask selects no pixels")
    p, g = pred[mask], gt[mask]
    if np.any(g <= 0):
        raise DomainError("ground truth must be positive inside the mask")
    if np.any(p <= 0):
        raise DomainError("prediction must be positive inside the mask")
    err = p - g
    ratio = np.maximum(p / g, g / p)
    bump = np.minimum(100.0 * BUMP_CLAMP, 100.0 * hessian_frobenius(pred - gt)[mask]).mean()
    accs = [100.0 * np.mean(ratio < t) for t in DELTA_THRESHOLDS]
    return MetricsReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        log_rmse=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        abs_rel=float(np.mean(np.abs(err) / g)),
        sqr_rel=float(np.mean(err ** 2 / g)),
        bump=float(bump),
        acc_1=float(accs[0]),
        acc_2=float(accs[1]),
        acc_3=float(accs[2]),
    )
