"""Thin-lens defocus model and a layered synthetic focal-stack renderer."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

SIGMA_MAX_PX = 8.0
NUM_LAYERS = 16


class DomainError(ValueError):
    """Argument outside the domain of a physical formula."""


class StackValidationError(ValueError):
    """A focal stack violates one of its invariants."""


@dataclass(frozen=True)
class CameraModel:
    """Thin-lens camera. Lengths in meters.

    ``baseline * focal_length`` is the disparity scale: ``disparity = b*f/depth``.
    The default baseline makes that product 1 m^2, so disparity is inverse meters.
    ``coc_model`` selects the blur law used when rendering (``"thin_lens"`` or
    ``"printed"``, see :func:`coc_sigma_px`).
    """

    focal_length: float = 0.05
    f_number: float = 2.0
    baseline: float = 20.0
    pixel_pitch: float = 3e-4
    sensor_distance: float | None = None
    coc_model: str = "thin_lens"

    def __post_init__(self):
        for name in ("focal_length", "f_number", "baseline", "pixel_pitch"):
            if not getattr(self, name) > 0:
                raise DomainError(f"CameraModel.{name} must be > 0, got {getattr(self, name)}")
        if self.coc_model not in ("thin_lens", "printed"):
            raise ValueError(f"unknown coc_model {self.coc_model!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(**d)


def _check_depth(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if np.any(~(z > 0)):
        raise DomainError(f"object distance must be > 0, got min {np.min(z)}")
    return z


def coc_diameter(camera: CameraModel, d_f, z):
    """Signed circle-of-confusion diameter ``f^2/(N (z-d_f)) * |1 - d_f/z|``.

    Defined as exactly 0 when ``z == d_f``.  Note the absolute value cancels the
    ``z - d_f`` factor, so for ``z != d_f`` this equals ``sign(z-d_f) f^2/(N z)``.
    """
    z = _check_depth(z)
    d_f = np.asarray(d_f, dtype=np.float64)
    f, n = camera.focal_length, camera.f_number
    diff = z - d_f
    in_focus = diff == 0
    safe = np.where(in_focus, 1.0, diff)
    c = f * f / (n * safe) * np.abs(1.0 - d_f / z)
    c = np.where(in_focus, 0.0, c)
    return float(c) if c.ndim == 0 else c


def thin_lens_coc(camera: CameraModel, d_f, z):
    """Signed standard thin-lens blur diameter ``f^2 |z-d_f| / (N z (d_f-f))``."""
    z = _check_depth(z)
    d_f = np.asarray(d_f, dtype=np.float64)
    f, n = camera.focal_length, camera.f_number
    if np.any(d_f <= f):
        raise DomainError(f"focus distance must exceed the focal length {f}")
    c = np.sign(z - d_f) * f * f * np.abs(z - d_f) / (n * z * (d_f - f))
    return float(c) if c.ndim == 0 else c


def coc_sigma_px(camera: CameraModel, d_f, z):
    """Gaussian blur sigma in pixels: half the CoC diameter, clamped to [0, 8]."""
    law = thin_lens_coc if camera.coc_model == "thin_lens" else coc_diameter
    sigma = np.abs(law(camera, d_f, z)) / camera.pixel_pitch / 2.0
    sigma = np.clip(sigma, 0.0, SIGMA_MAX_PX)
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def depth_to_disparity(depth, camera: CameraModel):
    depth = np.asarray(depth)
    if np.any(~(depth > 0)):
        raise DomainError("depth must be strictly positive")
    return camera.baseline * camera.focal_length / depth


def disparity_to_depth(disparity, camera: CameraModel):
    disparity = np.asarray(disparity)
    if np.any(~(disparity > 0)):
        raise DomainError("disparity must be strictly positive")
    return camera.baseline * camera.focal_length / disparity


# ---------------------------------------------------------------------------
# Scenes and rendering
# ---------------------------------------------------------------------------

@dataclass
class Scene:
    image: np.ndarray  # H×W×3 in [0,1], all in focus
    depth: np.ndarray  # H×W meters
    z_min: float = 0.5
    z_max: float = 5.0

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise DomainError(f"need 0 < z_min < z_max, got {self.z_min}, {self.z_max}")
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.shape[:2] != self.depth.shape:
            raise StackValidationError(f"image {self.image.shape} and depth {self.depth.shape} disagree")
        if self.depth.min() < self.z_min or self.depth.max() > self.z_max:
            raise DomainError(f"depth outside [{self.z_min}, {self.z_max}]: "
                              f"[{self.depth.min()}, {self.depth.max()}]")


@dataclass
class FocalStack:
    frames: np.ndarray  # n×H×W×3
    focus_distances: np.ndarray  # n, strictly ascending
    camera: CameraModel

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.focus_distances = np.asarray(self.focus_distances, dtype=np.float64)
        validate_stack(self.frames, self.focus_distances)

    def __len__(self) -> int:
        return len(self.focus_distances)

    def prefix(self, k: int) -> "FocalStack":
        if not 1 <= k <= len(self):
            raise StackValidationError(f"prefix length {k} outside [1, {len(self)}]")
        return FocalStack(self.frames[:k], self.focus_distances[:k], self.camera)


def validate_stack(frames: np.ndarray, focus_distances: np.ndarray) -> None:
    n = len(focus_distances)
    if n < 1:
        raise StackValidationError("a focal stack needs at least one frame")
    if len(frames) != n:
        raise StackValidationError(f"{len(frames)} frames but {n} focus distances")
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise StackValidationError(f"frames must be n×H×W×3, got {frames.shape}")
    if np.any(np.diff(focus_distances) <= 0):
        raise StackValidationError(f"focus distances must be strictly ascending: {list(focus_distances)}")


def default_focus_distances(n: int = 10, z_min: float = 0.5, z_max: float = 5.0) -> np.ndarray:
    """``n`` distances, ascending, evenly spaced in inverse depth over [z_min, z_max]."""
    if n == 1:
        return np.array([2.0 / (1.0 / z_min + 1.0 / z_max)])
    return 1.0 / np.linspace(1.0 / z_min, 1.0 / z_max, n)


def gaussian_kernel(sigma: float, truncate: float = 3.0) -> np.ndarray:
    radius = int(truncate * sigma + 0.5)
    if sigma <= 0 or radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float, truncate: float = 3.0) -> np.ndarray:
    """Separable truncated Gaussian over the first two axes, mirror-symmetric borders."""
    k = gaussian_kernel(sigma, truncate)
    if k.size == 1:
        return img.astype(np.float64, copy=True)
    r = k.size // 2
    out = img.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for j, w in enumerate(k):
            acc += w * np.take(padded, np.arange(j, j + n), axis=axis)
        out = acc
    return out


def layer_edges(z_min: float, z_max: float, layers: int = NUM_LAYERS) -> np.ndarray:
    """Inverse-depth bin edges, far to near."""
    return np.linspace(1.0 / z_max, 1.0 / z_min, layers + 1)


def layer_index(depth: np.ndarray, z_min: float, z_max: float, layers: int = NUM_LAYERS) -> np.ndarray:
    """Layer of each pixel; 0 is the farthest."""
    edges = layer_edges(z_min, z_max, layers)
    return np.clip(np.digitize(1.0 / depth, edges[1:-1]), 0, layers - 1)


def render_frame(scene: Scene, camera: CameraModel, d_f: float, layers: int = NUM_LAYERS,
                 truncate: float = 3.0) -> np.ndarray:
    """Defocus ``scene`` for a lens focused at ``d_f``.

    Pixels are bucketed into inverse-depth layers.  Each layer is blurred with
    the sigma of its median depth, together with its coverage mask, and the
    layers are composited far to near with the blurred mask as alpha.
    """
    idx = layer_index(scene.depth, scene.z_min, scene.z_max, layers)
    out = np.zeros(scene.image.shape, dtype=np.float64)
    for layer in range(layers):
        alpha = (idx == layer).astype(np.float64)
        if not alpha.any():
            continue
        z_rep = float(np.median(scene.depth[idx == layer]))
        sigma = coc_sigma_px(camera, d_f, z_rep)
        color = gaussian_blur(scene.image * alpha[..., None], sigma, truncate)
        cover = gaussian_blur(alpha, sigma, truncate)[..., None]
        out = out * (1.0 - cover) + color
    return np.clip(out, 0.0, 1.0)


def render_stack(scene: Scene, camera: CameraModel, focus_distances) -> FocalStack:
    focus_distances = np.asarray(focus_distances, dtype=np.float64)
    if np.any(np.diff(focus_distances) <= 0):
        raise StackValidationError(f"focus distances must be strictly ascending: {list(focus_distances)}")
    if focus_distances.min() < scene.z_min or focus_distances.max() > scene.z_max:
        raise StackValidationError(f"focus distances outside [{scene.z_min}, {scene.z_max}]")
    frames = np.stack([render_frame(scene, camera, d) for d in focus_distances])
    return FocalStack(frames, focus_distances, camera)


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    cell = int(rng.choice([1, 2, 3, 4, 6]))
    coarse = rng.uniform(0.0, 1.0, size=(h // cell + 1, w // cell + 1, 1))
    blocks = coarse.repeat(cell, axis=0).repeat(cell, axis=1)[:h, :w]
    tint = rng.uniform(0.2, 1.0, size=3)
    base = rng.uniform(0.0, 0.3, size=3)
    return np.clip(base + (1.0 - base) * blocks * tint, 0.0, 1.0)


def make_scene(seed: int, H: int = 64, W: int = 64, z_min: float = 0.5, z_max: float = 5.0,
               patch_size: int = 16) -> Scene:
    """Textured background plane plus 3-8 textured fronto-parallel rectangles."""
    if H % patch_size or W % patch_size:
        raise ValueError(f"H={H}, W={W} must be multiples of the patch size {patch_size}")
    rng = np.random.default_rng(seed)
    inv_lo, inv_hi = 1.0 / z_max, 1.0 / z_min

    image = _texture(rng, H, W)
    inv_top, inv_bottom = rng.uniform(inv_lo, inv_lo + 0.3 * (inv_hi - inv_lo), size=2)
    rows = np.linspace(inv_top, inv_bottom, H)[:, None]
    depth = np.broadcast_to(1.0 / rows, (H, W)).copy()

    count = int(rng.integers(3, 9))
    inv_depths = np.sort(rng.uniform(inv_lo, inv_hi, size=count))  # far first
    for inv in inv_depths:
        h = int(rng.integers(H // 6, H // 2 + 1))
        w = int(rng.integers(W // 6, W // 2 + 1))
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        image[top:top + h, left:left + w] = _texture(rng, h, w)
        depth[top:top + h, left:left + w] = 1.0 / inv
    depth = np.clip(depth, z_min, z_max)
    return Scene(image=image, depth=depth, z_min=z_min, z_max=z_max)
