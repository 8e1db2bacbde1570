"""Dark channel, airlight estimation, coarse transmission and radiance recovery."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import as_map, as_rgb

AIRLIGHT_FLOOR = 1e-6
AIRLIGHT_FRACTION = 0.001


@dataclass(frozen=True)
class DcpParams:
    patch: int = 15
    omega: float = 0.95
    t0: float = 0.1

    def __post_init__(self):
        _check_patch(self.patch)
        if not 0 < self.omega <= 1:
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        if not 0 < self.t0 < 1:
            raise ValueError(f"t0 must lie in (0, 1), got {self.t0}")


def _check_patch(patch: int) -> None:
    if int(patch) != patch or patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {patch}")


def min_filter(m: np.ndarray, patch: int) -> np.ndarray:
    """Windowed minimum with windows clipped to the image.

    Edge replication gives the same result as clipping for a min filter,
    since replicated samples already lie inside the clipped window.
    """
    _check_patch(patch)
    if patch == 1:
        return m.copy()
    return ndimage.minimum_filter(m, size=patch, mode="nearest")


def dark_channel(img, patch: int = 15) -> np.ndarray:
    img = as_rgb(img)
    return min_filter(img.min(axis=2), patch)


def estimate_airlight(img, patch: int = 15) -> np.ndarray:
    """Airlight from the brightest hazy pixel among the haziest dark-channel pixels.

    The candidate set is the top 0.1% of dark-channel values (ceiling, at
    least one pixel; ties resolved by linear index). Brightness is the
    channel sum and ties go to the lowest linear index.
    """
    img = as_rgb(img)
    dark = dark_channel(img, patch).ravel()
    n = dark.size
    k = max(1, math.ceil(AIRLIGHT_FRACTION * n))
    idx = np.arange(n)
    candidates = np.lexsort((idx, -dark))[:k]
    candidates = np.sort(candidates)
    flat = img.reshape(-1, 3)
    brightness = flat[candidates].sum(axis=1)
    best = candidates[np.argmax(brightness)]  # argmax returns first max -> lowest index
    return np.maximum(flat[best], AIRLIGHT_FLOOR)


def _check_airlight(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"airlight must be a 3-vector, got shape {a.shape}")
    if np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise ValueError(f"airlight channels must be positive, got {a}")
    return a


def coarse_transmission(img, a, params: DcpParams = DcpParams()) -> np.ndarray:
    """Coarse transmission ``1 - omega * dark_channel(I / A)``."""
    img = as_rgb(img)
    a = _check_airlight(a)
    return 1.0 - params.omega * dark_channel(img / a, params.patch)


def recover_radiance(img, t, a, t0: float = 0.1) -> np.ndarray:
    """Invert the haze model, ``J = (I - A) / max(t, t0) + A``. No clamping."""
    img = as_rgb(img)
    t = as_map(t, "transmission")
    if t.shape != img.shape[:2]:
        raise ValueError(f"transmission shape {t.shape} does not match image {img.shape[:2]}")
    if not 0 < t0 < 1:
        raise ValueError(f"t0 must lie in (0, 1), got {t0}")
    a = _check_airlight(a)
    tc = np.maximum(t, t0)[..., None]
    # same as (I - A) / t + A, but exact where t == 1
    return (img - (1.0 - tc) * a) / tc
