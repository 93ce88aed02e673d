"""On-disk synthetic focal-stack datasets.

Each stack directory holds ``frame_00.png`` ... (16-bit RGB, ascending focus
distance), ``depth.pfm`` and ``manifest.json``.  The dataset root carries a
``manifest.json`` listing the stack directories.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import read_pfm, read_png16, write_pfm, write_png16
from .optics import (CameraModel, FocalStack, StackValidationError, default_focus_distances,
                     depth_to_disparity, make_scene, render_stack)


@dataclass
class StackSample:
    stack: FocalStack
    depth: np.ndarray
    seed: int | None = None
    path: Path | None = None

    @property
    def disparity(self) -> np.ndarray:
        return depth_to_disparity(self.depth, self.stack.camera)

    def prefix(self, k: int) -> "StackSample":
        return StackSample(self.stack.prefix(k), self.depth, self.seed, self.path)


@dataclass
class DatasetManifest:
    root: Path
    stacks: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def stack_paths(self) -> list[Path]:
        return [self.root / s["dir"] for s in self.stacks]

    def load(self, limit: int | None = None) -> list[StackSample]:
        paths = self.stack_paths()[:limit]
        return [load_stack(p) for p in paths]


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def stack_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synthesize(seed: int, n: int = 10, size: int = 64, camera: CameraModel | None = None,
               z_min: float = 0.5, z_max: float = 5.0, patch_size: int = 16) -> StackSample:
    camera = camera or CameraModel()
    scene = make_scene(seed, size, size, z_min, z_max, patch_size)
    stack = render_stack(scene, camera, default_focus_distances(n, z_min, z_max))
    return StackSample(stack, scene.depth, seed)


def write_stack(directory: str | Path, sample: StackSample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(sample.stack.frames):
        write_png16(directory / f"frame_{i:02d}.png", frame)
    write_pfm(directory / "depth.pfm", sample.depth)
    h, w = sample.depth.shape
    meta = {"camera": sample.stack.camera.to_dict(),
            "focus_distances": [float(d) for d in sample.stack.focus_distances],
            "seed": sample.seed, "H": h, "W": w}
    (directory / "manifest.json").write_text(_dumps(meta))


def load_stack(directory: str | Path) -> StackSample:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise StackValidationError(f"{directory}: missing manifest.json")
    meta = json.loads(manifest_path.read_text())
    distances = np.asarray(meta["focus_distances"], dtype=np.float64)
    frames = []
    for i in range(len(distances)):
        p = directory / f"frame_{i:02d}.png"
        if not p.exists():
            raise StackValidationError(f"{directory}: {len(distances)} focus distances but {p.name} is missing")
        frames.append(read_png16(p))
    extra = sorted(directory.glob("frame_*.png"))
    if len(extra) != len(distances):
        raise StackValidationError(f"{directory}: {len(extra)} frame files but {len(distances)} focus distances")
    frames = np.stack(frames)
    h, w = meta["H"], meta["W"]
    if frames.shape[1:3] != (h, w):
        raise StackValidationError(f"{directory}: frames are {frames.shape[1:3]}, manifest says {(h, w)}")
    depth_path = directory / "depth.pfm"
    depth = read_pfm(depth_path).astype(np.float64) if depth_path.exists() else None
    if depth is not None and depth.shape != (h, w):
        raise StackValidationError(f"{directory}: depth is {depth.shape}, manifest says {(h, w)}")
    stack = FocalStack(frames, distances, CameraModel.from_dict(meta["camera"]))
    return StackSample(stack, depth, meta.get("seed"), directory)


def generate_dataset(root: str | Path, count: int, seed: int, n: int = 10, size: int = 64,
                     camera: CameraModel | None = None, z_min: float = 0.5, z_max: float = 5.0,
                     patch_size: int = 16) -> DatasetManifest:
    root = Path(root)
    camera = camera or CameraModel()
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    stacks = []
    for i in range(count):
        s = stack_seed(seed, i)
        name = f"stack_{i:04d}"
        write_stack(root / name, synthesize(s, n, size, camera, z_min, z_max, patch_size))
        stacks.append({"dir": name, "seed": s})
    meta = {"count": count, "seed": seed, "n": n, "H": size, "W": size, "z_min": z_min, "z_max": z_max,
            "camera": camera.to_dict()}
    (root / "manifest.json").write_text(_dumps({"stacks": stacks, "meta": meta}))
    return DatasetManifest(root, stacks, meta)


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{root}: no dataset manifest.json")
    raw = json.loads(path.read_text())
    return DatasetManifest(root, raw["stacks"], raw.get("meta", {}))
