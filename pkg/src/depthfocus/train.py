"""Training and evaluation loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import StackSample
from .decoder import predict_depth
from .metrics import MetricsReport, compute_metrics, total_loss
from .model import FocusDepthNet
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step


@dataclass
class Trainer:
    config: RunConfig
    model: FocusDepthNet
    optimizer: Adam
    step: int = 0
    losses: list[float] = field(default_factory=list)

    @classmethod
    def create(cls, config: RunConfig) -> "Trainer":
        model = FocusDepthNet(config.model, seed=config.seed)
        opt = Adam(dict(model.named_parameters()), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        return cls(config, model, opt)

    def _prefix_length(self, n: int, step: int) -> int:
        if not self.config.length_augment or n <= self.config.min_augment_length:
            return n
        rng = np.random.default_rng([self.config.seed, step])
        return int(rng.integers(self.config.min_augment_length, n + 1))

    def stack_loss(self, sample: StackSample, k: int | None = None) -> T.Tensor:
        frames = sample.stack.frames if k is None else sample.stack.frames[:k]
        pred = self.model(frames)
        return total_loss(pred, sample.disparity, self.config.loss)

    def train_step(self, samples: Sequence[StackSample]) -> float:
        """One optimizer update, accumulating over ``grad_accum`` stacks chosen by step index."""
        accum = self.config.grad_accum
        self.optimizer.zero_grad()
        total = 0.0
        for j in range(accum):
            sample = samples[(self.step * accum + j) % len(samples)]
            k = self._prefix_length(len(sample.stack), self.step * accum + j)
            loss = self.stack_loss(sample, k) * (1.0 / accum)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(self.step, value)
            loss.backward()
            total += value
        self.optimizer.step()
        self.step += 1
        self.losses.append(total)
        return total

    def fit(self, samples: Sequence[StackSample], steps: int | None = None, log_every: int | None = None) -> list[float]:
        steps = self.config.steps if steps is None else steps
        per_epoch = max(1, -(-len(samples) // self.config.grad_accum))
        log_every = log_every or per_epoch
        start = self.step
        for _ in range(steps):
            loss = self.train_step(samples)
            if (self.step - start) % log_every == 0:
                log.info("step %d epoch %d loss %.6g", self.step, self.step // per_epoch, loss)
        return self.losses[start:]

    # -- persistence ---------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        tensors = dict(self.model.state_dict())
        tensors.update(self.optimizer.state_dict())
        meta = {"config": self.config.to_dict(), "step": self.step, "losses": self.losses}
        return save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        config = RunConfig.from_dict(meta["config"])
        trainer = cls.create(config)
        names = {n for n, _ in trainer.model.named_parameters()}
        trainer.model.load_state_dict({k: v for k, v in tensors.items() if k in names})
        trainer.optimizer = Adam(dict(trainer.model.named_parameters()), lr=config.lr, beta1=config.beta1,
                                 beta2=config.beta2)
        trainer.optimizer.load_state_dict(tensors, meta["step"])
        trainer.step = meta["step"]
        trainer.losses = list(meta["losses"])
        return trainer


def load_model(path: str | Path) -> tuple[FocusDepthNet, RunConfig]:
    tensors, meta = load_checkpoint(path)
    config = RunConfig.from_dict(meta["config"])
    model = FocusDepthNet(config.model, seed=config.seed)
    names = {n for n, _ in model.named_parameters()}
    model.load_state_dict({k: v for k, v in tensors.items() if k in names})
    return model, config


def predict(model: FocusDepthNet, frames: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return model(frames).data.astype(np.float64)


def evaluate(model: FocusDepthNet, samples: Sequence[StackSample], frames_k: int | None = None,
             space: str = "disparity") -> list[MetricsReport]:
    """Metrics per stack using only the first ``frames_k`` frames."""
    reports = []
    for sample in samples:
        n = len(sample.stack)
        k = n if frames_k is None else frames_k
        if not 1 <= k <= n:
            raise ValueError(f"frames_k={k} outside [1, {n}]")
        disp = predict(model, sample.stack.frames[:k])
        if space == "disparity":
            reports.append(compute_metrics(disp, sample.disparity))
        else:
            reports.append(compute_metrics(predict_depth(disp, sample.stack.camera), sample.depth))
    return reports


def frame_sweep(model: FocusDepthNet, samples: Sequence[StackSample], ks: Sequence[int],
                space: str = "disparity") -> dict[int, MetricsReport]:
    return {k: MetricsReport.mean(evaluate(model, samples, k, space)) for k in ks}


def training_rmse(model: FocusDepthNet, samples: Sequence[StackSample]) -> float:
    return float(np.mean([r.rmse for r in evaluate(model, samples)]))


