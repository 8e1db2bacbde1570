"""PSNR/SSIM, evaluation reports and validation-driven epoch selection."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .image import as_rgb

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


def _pair(a, b):
    a, b = as_rgb(a, "first image"), as_rgb(b, "second image")
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return np.clip(a, 0.0, 1.0), np.clip(b, 0.0, 1.0)


def psnr(a, b) -> float:
    """PSNR in dB for peak 1, after clamping to [0, 1]; identical images give ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean SSIM over all valid 11x11 Gaussian windows of the channel-mean grayscale."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    x, y = a.mean(axis=2), b.mean(axis=2)
    win = gaussian_window()

    def filt(m):
        return signal.correlate(m, win, mode="valid")

    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    """Per-image metrics plus corpus means.

    Serialized as a whitespace table (``to_text``) or JSON (``to_json``)
    with keys ``images`` (filename, psnr_db, ssim, time_s), ``means`` and
    ``skipped``. Zero-MSE pairs report ``psnr_db`` = 100.
    """

    names: list[str] = field(default_factory=list)
    psnr_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    time_s: list[float] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def add(self, name: str, p: float, s: float, t: float) -> None:
        self.names.append(name)
        self.psnr_db.append(p)
        self.ssim.append(s)
        self.time_s.append(t)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    @property
    def mean_time(self) -> float:
        return float(np.mean(self.time_s)) if self.time_s else float("nan")

    def to_dict(self) -> dict:
        return {
            "images": [{"filename": n, "psnr_db": p, "ssim": s, "time_s": t}
                       for n, p, s, t in zip(self.names, self.psnr_db, self.ssim, self.time_s)],
            "means": {"filename": "MEAN", "psnr_db": self.mean_psnr, "ssim": self.mean_ssim,
                      "time_s": self.mean_time},
            "skipped": list(self.skipped),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"{'filename':<32} {'psnr_db':>10} {'ssim':>8} {'time_s':>9}"]
        for n, p, s, t in zip(self.names, self.psnr_db, self.ssim, self.time_s):
            lines.append(f"{n:<32} {p:>10.4f} {s:>8.5f} {t:>9.4f}")
        lines.append(f"{'MEAN':<32} {self.mean_psnr:>10.4f} {self.mean_ssim:>8.5f} {self.mean_time:>9.4f}")
        for name in self.skipped:
            lines.append(f"skipped: {name}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rep = cls(skipped=list(d.get("skipped", [])))
        for row in d["images"]:
            rep.add(row["filename"], row["psnr_db"], row["ssim"], row["time_s"])
        return rep


def normalize_range(img: np.ndarray) -> np.ndarray:
    """Min-max stretch to [0, 1] (identity for images already inside the range)."""
    lo, hi = float(img.min()), float(img.max())
    if lo >= 0.0 and hi <= 1.0:
        return img
    if hi - lo <= 0:
        return np.clip(img, 0.0, 1.0)
    return (img - lo) / (hi - lo)


def score(dehazed: np.ndarray, clear: np.ndarray) -> tuple[float, float]:
    """PSNR/SSIM of a dehazed result, normalizing it only when that improves both."""
    p, s = psnr(dehazed, clear), ssim(dehazed, clear)
    if dehazed.min() < 0.0 or dehazed.max() > 1.0:
        norm = normalize_range(dehazed)
        pn, sn = psnr(norm, clear), ssim(norm, clear)
        if pn >= p and sn >= s:
            return pn, sn
    return p, s


def validate(model, pairs, dcp=None, names=None) -> EvalReport:
    """Dehaze each hazy image and score it against its clear counterpart.

    ``model`` is a :class:`~haze_lab.net.model.CanModel` or any callable
    mapping a hazy image to a transmission map. Pairs with mismatched
    sizes are skipped and listed in the report.
    """
    from .dcp import DcpParams
    from .net.predict import predict_and_dehaze

    pairs = list(pairs)
    if not pairs:
        raise ValueError("validation needs at least one (hazy, clear) pair")
    dcp = dcp or DcpParams()
    names = list(names) if names is not None else [f"pair{i:04d}" for i in range(len(pairs))]
    report = EvalReport()
    for name, (hazy, clear) in zip(names, pairs):
        hazy, clear = np.asarray(hazy, dtype=np.float64), np.asarray(clear, dtype=np.float64)
        if hazy.shape != clear.shape:
            log.warning("skipping %s: hazy %s vs clear %s", name, hazy.shape, clear.shape)
            report.skipped.append(name)
            continue
        start = time.perf_counter()
        dehazed = predict_and_dehaze(model, hazy, dcp)
        elapsed = max(time.perf_counter() - start, 1e-9)
        p, s = score(dehazed, clear)
        report.add(name, p, s, elapsed)
    return report


def select_best_epoch(history) -> int:
    """Epoch index with the best mean PSNR; ties go to higher SSIM, then the earlier epoch."""
    history = list(history)
    if not history:
        raise ValueError("empty validation history")
    best = 0
    for i, rep in enumerate(history[1:], start=1):
        cur, top = (rep.mean_psnr, rep.mean_ssim), (history[best].mean_psnr, history[best].mean_ssim)
        if cur > top:
            best = i
    return best
