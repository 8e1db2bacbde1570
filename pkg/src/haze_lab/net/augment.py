"""Training-set augmentation: one plain resize plus three random variants, all 128x128."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

OUT_SIZE = 128
CROP_SIZES = (256, 512)
ANGLES = (0, 45, 90, 135)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    h, w = img.shape[:2]
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def rotate_valid(img: np.ndarray, angle: int) -> np.ndarray:
    """Rotate counter-clockwise and keep the largest centered axis-aligned valid rectangle."""
    angle %= 180
    if angle == 0:
        return img
    if angle == 90:
        return np.rot90(img, 1, axes=(0, 1)).copy()
    h, w = img.shape[:2]
    rotated = ndimage.rotate(img, angle, axes=(1, 0), reshape=True, order=1, mode="constant")
    # largest axis-aligned rectangle inside a w x h rectangle rotated by angle
    a = math.radians(angle)
    sin_a, cos_a = abs(math.sin(a)), abs(math.cos(a))
    long_side, short_side = max(w, h), min(w, h)
    if short_side <= 2.0 * sin_a * cos_a * long_side or abs(sin_a - cos_a) < 1e-10:
        x = 0.5 * short_side
        if w >= h:
            cw, ch = x / sin_a, x / cos_a
        else:
            cw, ch = x / cos_a, x / sin_a
    else:
        cos_2a = cos_a * cos_a - sin_a * sin_a
        cw = (w * cos_a - h * sin_a) / cos_2a
        ch = (h * cos_a - w * sin_a) / cos_2a
    # the inscribed rectangle's corners touch the rotated border, where
    # interpolation blends in the fill value; back off one pixel per side
    cw, ch = max(1, int(math.floor(cw)) - 2), max(1, int(math.floor(ch)) - 2)
    rh, rw = rotated.shape[:2]
    top, left = (rh - ch) // 2, (rw - cw) // 2
    return rotated[top:top + ch, left:left + cw]


def augment_variant(img: np.ndarray, flip: bool, crop: int, top: int, left: int,
                    angle: int) -> np.ndarray:
    """Flip, square crop at ``(top, left)``, rotate, then resize to 128x128."""
    out = img[:, ::-1] if flip else img
    out = out[top:top + crop, left:left + crop]
    out = rotate_valid(out, angle)
    return resize_bilinear(out, OUT_SIZE, OUT_SIZE)


def augment(img: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    """Four 128x128 variants of one image.

    Crops larger than the image shrink to its shorter side. Images smaller
    than 128 on either side are only flipped and resized in the random
    variants.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out = [resize_bilinear(img, OUT_SIZE, OUT_SIZE)]
    for _ in range(3):
        flip = bool(rng.integers(2))
        crop_choice = int(rng.choice(CROP_SIZES))
        angle = int(rng.choice(ANGLES))
        if min(h, w) < OUT_SIZE:
            flipped = img[:, ::-1] if flip else img
            out.append(resize_bilinear(flipped, OUT_SIZE, OUT_SIZE))
            continue
        crop = min(crop_choice, h, w)
        top = int(rng.integers(h - crop + 1))
        left = int(rng.integers(w - crop + 1))
        out.append(augment_variant(img, flip, crop, top, left, angle))
    return out
