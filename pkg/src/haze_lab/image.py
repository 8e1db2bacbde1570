"""Image containers, 8-bit file I/O and synthetic haze composition.

Images are plain numpy arrays: RGB images are ``(H, W, 3)`` float64 with
nominal range [0, 1]; scalar maps (transmission, depth) are ``(H, W)``.
Pixel ``n`` enumerates rows then columns (row-major), which is the
linearization used by the sparse matting Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed image files."""


SUPPORTED_SUFFIXES = (".png", ".ppm")


def as_rgb(img, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} has a zero dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_map(m, name: str = "map") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} has a zero dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_path(path) -> Path:
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageFormatError(f"unsupported image format: {path.suffix or '<none>'} ({path})")
    return path


def _open(path) -> Image.Image:
    path = _check_path(path)
    try:
        im = Image.open(path)
        im.load()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"cannot read image {path}: {exc}") from exc
    if im.width < 1 or im.height < 1:
        raise ImageFormatError(f"zero-dimension image: {path}")
    return im


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM as an ``(H, W, 3)`` array in [0, 1].

    Grayscale files are replicated to three channels. Files carrying an
    alpha channel and 16-bit files are rejected.
    """
    im = _open(path)
    if im.mode in ("RGBA", "LA", "PA", "RGBa", "La") or (
        im.mode == "P" and "transparency" in im.info
    ):
        raise ImageFormatError(f"alpha channels are not supported: {path}")
    if im.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
        raise ImageFormatError(f"only 8-bit images are supported, got mode {im.mode}: {path}")
    if im.mode != "RGB":
        im = im.convert("RGB")
    return np.asarray(im, dtype=np.float64) / 255.0


def load_map(path) -> np.ndarray:
    """Read a grayscale 8-bit file as an ``(H, W)`` map in [0, 1]."""
    im = _open(path)
    if im.mode in ("RGBA", "LA", "PA"):
        raise ImageFormatError(f"alpha channels are not supported: {path}")
    if im.mode != "L":
        im = im.convert("L")
    return np.asarray(im, dtype=np.float64) / 255.0


def quantize(arr: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round to 8-bit codes."""
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img, path) -> None:
    """Write an RGB image, clamping to [0, 1] before 8-bit quantization."""
    arr = as_rgb(img)
    path = _check_path(path)
    Image.fromarray(quantize(arr), mode="RGB").save(path)


def save_map(m, path) -> None:
    """Write a scalar map as an 8-bit grayscale image."""
    arr = as_map(m)
    path = _check_path(path)
    if path.suffix.lower() == ".ppm":
        # P6 is color-only; keep the file readable as RGB as well
        Image.fromarray(quantize(arr), mode="L").convert("RGB").save(path)
    else:
        Image.fromarray(quantize(arr), mode="L").save(path)


@dataclass(frozen=True)
class SynthSpec:
    """Homogeneous haze parameters: scattering ``beta``, airlight, depth map."""

    beta: float
    airlight: tuple[float, float, float]
    depth: np.ndarray

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        a = np.asarray(self.airlight, dtype=np.float64)
        if a.shape != (3,) or np.any(a <= 0) or np.any(a > 1):
            raise ValueError(f"airlight channels must lie in (0, 1], got {self.airlight}")
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2 or np.any(np.isnan(d)) or np.any(d < 0):
            raise ValueError("depth must be an (H, W) map of nonnegative values")


def transmission_from_depth(beta: float, depth: np.ndarray) -> np.ndarray:
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def compose_haze(clear, synth: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Apply the atmospheric scattering model to a clear image.

    Returns ``(hazy, t)`` where ``t = exp(-beta * depth)`` and
    ``hazy = t * clear + (1 - t) * airlight``.
    """
    clear = as_rgb(clear, "clear")
    depth = np.asarray(synth.depth, dtype=np.float64)
    if depth.shape != clear.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match image {clear.shape[:2]}")
    t = transmission_from_depth(synth.beta, depth)
    a = np.asarray(synth.airlight, dtype=np.float64)
    tt = t[..., None]
    hazy = tt * clear + (1.0 - tt) * a
    return hazy, t
