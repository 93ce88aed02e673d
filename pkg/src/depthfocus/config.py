"""Run configuration: one JSON/TOML file, dotted command-line overrides, RUN_SEED."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli

from .metrics import LossConfig
from .model import ModelConfig
from .optics import CameraModel


@dataclass
class RunConfig:
    seed: int = 0
    stack_size: int = 10
    train_count: int = 4
    val_count: int = 16
    steps: int = 500
    grad_accum: int = 4  # stacks per optimizer step; each stack is a batch of one
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    length_augment: bool = False
    min_augment_length: int = 4
    eval_space: str = "disparity"
    z_min: float = 0.5
    z_max: float = 5.0
    camera: CameraModel = field(default_factory=CameraModel)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.camera, dict):
            self.camera = CameraModel(**self.camera)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.stack_size < 1:
            raise ValueError(f"stack_size must be >= 1, got {self.stack_size}")
        if self.grad_accum < 1:
            raise ValueError(f"grad_accum must be >= 1, got {self.grad_accum}")
        if self.eval_space not in ("disparity", "depth"):
            raise ValueError(f"eval_space must be 'disparity' or 'depth', got {self.eval_space!r}")

    @property
    def image_size(self) -> int:
        return self.model.image_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` assignments; values are parsed as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise KeyError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return d


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                env: dict | None = None) -> RunConfig:
    d = RunConfig().to_dict()
    if path is not None:
        path = Path(path)
        text = path.read_text()
        loaded = tomli.loads(text) if path.suffix == ".toml" else json.loads(text)
        _merge(d, loaded)
    apply_overrides(d, overrides or [])
    env = os.environ if env is None else env
    if env.get("RUN_SEED"):
        d["seed"] = int(env["RUN_SEED"])
    return RunConfig.from_dict(d)


def _merge(base: dict, update: dict) -> None:
    for k, v in update.items():
        if k not in base:
            raise KeyError(f"unknown config key {k!r}")
        if isinstance(v, dict) and isinstance(base[k], dict):
            _merge(base[k], v)
        else:
            base[k] = v
