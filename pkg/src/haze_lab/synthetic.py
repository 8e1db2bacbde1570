"""Synthetic clear/hazy scenes with known transmission and airlight."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import SynthSpec, compose_haze


@dataclass
class Scene:
    clear: np.ndarray
    hazy: np.ndarray
    t: np.ndarray
    airlight: np.ndarray


def dark_pixels(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Random colors with one channel exactly zero at every pixel."""
    colors = rng.uniform(0.05, 1.0, size=shape + (3,))
    zero = rng.integers(0, 3, size=shape)
    np.put_along_axis(colors, zero[..., None], 0.0, axis=2)
    return colors


def tiled_scene(rng: np.random.Generator, tiles: tuple[int, int] = (2, 2), tile: int = 32,
                band: int = 8, airlight: float = 0.9,
                t_range: tuple[float, float] = (0.3, 0.95)) -> Scene:
    """Tiles of constant transmission whose coarse estimate is exact.

    Each tile's core has a zero channel at every pixel, so a DCP window that
    stays inside one core sees ``min I/A = 1 - t``. A band of width ``band``
    around each tile has ``J = A``, so hazy and clear agree there whatever
    the transmission estimate. With a DCP patch of at most ``2 * band - 1``
    the coarse transmission (omega = 1) equals the true one on every core
    and the band-only windows carry the airlight.
    """
    rows, cols = tiles
    h, w = rows * tile, cols * tile
    a = np.full(3, airlight)
    clear = np.empty((h, w, 3))
    clear[:] = a
    t = np.empty((h, w))
    for r in range(rows):
        for c in range(cols):
            ys, xs = slice(r * tile, (r + 1) * tile), slice(c * tile, (c + 1) * tile)
            t[ys, xs] = rng.uniform(*t_range)
            core = (slice(r * tile + band, (r + 1) * tile - band),
                    slice(c * tile + band, (c + 1) * tile - band))
            ch, cw = tile - 2 * band, tile - 2 * band
            clear[core] = dark_pixels(rng, (ch, cw))
    tt = t[..., None]
    hazy = tt * clear + (1 - tt) * a
    return Scene(clear, hazy, t, a)


def _smooth_noise(rng, shape, scale):
    from scipy import ndimage
    return ndimage.gaussian_filter(rng.standard_normal(shape), scale, mode="reflect")


def natural_scene(rng: np.random.Generator, size: int = 64, n_objects: int = 6,
                  sky: bool = True, beta: float | None = None) -> Scene:
    """Outdoor-like scene: colorful textured objects at distinct depths under an optional sky.

    Object colors are saturated (one channel close to zero) so the dark
    channel prior roughly holds away from the sky, which is overcast in
    the airlight color.
    """
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / size
    clear = np.empty((h, w, 3))
    base = rng.uniform(0.1, 0.6, size=3)
    base[rng.integers(3)] *= 0.1
    # texture is luminance shading, so local colors stay on a line through the base color
    clear[:] = base * (1.0 + 0.4 * _smooth_noise(rng, (h, w), 1.5))[..., None]
    depth = 0.3 + 1.2 * (1.0 - yy)  # ground recedes towards the top
    horizon = rng.uniform(0.2, 0.35) if sky else -1.0
    for _ in range(n_objects):
        cy, cx = rng.uniform(max(horizon, 0) + 0.1, 0.95), rng.uniform(0.05, 0.95)
        ry, rx = rng.uniform(0.08, 0.25), rng.uniform(0.08, 0.25)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = rng.uniform(0.2, 0.95, size=3)
        color[rng.integers(3)] = rng.uniform(0.0, 0.05)
        shading = 1.0 + 0.3 * _smooth_noise(rng, (h, w), 1.0)
        clear[mask] = color * shading[mask][:, None]
        depth[mask] = rng.uniform(0.1, 1.5)
    airlight = np.full(3, rng.uniform(0.8, 0.95)) + rng.uniform(0.0, 0.05, 3)
    airlight = np.minimum(airlight, 1.0)
    if sky:
        # overcast sky in the airlight color
        sky_mask = yy < horizon
        clear[sky_mask] = airlight + 0.01 * _smooth_noise(rng, (h, w, 3), (2, 2, 0))[sky_mask]
        depth[sky_mask] = 2.5
    clear = np.clip(clear, 0.0, 1.0)
    beta = rng.uniform(0.4, 0.9) if beta is None else beta
    hazy, t = compose_haze(clear, SynthSpec(beta, tuple(airlight), depth))
    return Scene(clear, hazy, t, airlight)
