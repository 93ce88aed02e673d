"""PFM and 16-bit PNG reading/writing."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import png


def write_pfm(path: str | Path, image: np.ndarray) -> None:
    """Little-endian PFM; rows stored bottom to top as the format requires."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim == 2:
        header = "Pf"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM holds H×W or H×W×3 images, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image[::-1]).tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if header not in ("PF", "Pf"):
            raise ValueError(f"{path}: not a PFM file")
        dims = re.match(r"^(\d+)\s+(\d+)\s*$", fh.readline().decode("ascii"))
        if not dims:
            raise ValueError(f"{path}: malformed PFM size line")
        w, h = map(int, dims.groups())
        scale = float(fh.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == "PF" else 1
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} values, found {data.size}")
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


def write_png16(path: str | Path, rgb: np.ndarray) -> None:
    """RGB floats in [0,1] -> 16-bit PNG."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got {rgb.shape}")
    q = np.round(np.clip(rgb, 0.0, 1.0) * 65535.0).astype(np.uint16)
    h, w, _ = q.shape
    writer = png.Writer(width=w, height=h, greyscale=False, bitdepth=16)
    with open(path, "wb") as fh:
        writer.write(fh, q.reshape(h, w * 3))


def read_png16(path: str | Path) -> np.ndarray:
    w, h, rows, info = png.Reader(filename=str(path)).asRGB()
    if info["bitdepth"] != 16:
        raise ValueError(f"{path}: expected a 16-bit PNG, got bit depth {info['bitdepth']}")
    arr = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows]).reshape(h, w, 3)
    return arr.astype(np.float64) / 65535.0


def write_png_visualization(path: str | Path, values: np.ndarray) -> None:
    """Min-max normalised 8-bit greyscale rendering of a single-channel map."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    q = np.round(scaled * 255).astype(np.uint8)
    writer = png.Writer(width=q.shape[1], height=q.shape[0], greyscale=True, bitdepth=8)
    with open(path, "wb") as fh:
        writer.write(fh, q)
