"""The dark channel prior energy as a vectorized, differentiable loss.

For a transmission map ``t`` the energy is

    E(t) = 1/2 * sum_n sum_k W[n, k] * (t[I_k] - t[J_k])**2 + lam * sum (t - t_coarse)**2

where ``(I_k, J_k)`` runs over the 81 ordered pixel pairs of window ``n``.
The 1/2 accounts for each unordered pair appearing twice among the ordered
ones, which makes the first term equal ``t^T L t`` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dcp import DcpParams, coarse_transmission, estimate_airlight
from .image import as_map, as_rgb
from .matting import PAIR_I, PAIR_J, MattingWeights, matting_weights


@dataclass(frozen=True)
class LossContext:
    """Per-image constants of the loss; never differentiated through."""

    weights: MattingWeights
    coarse: np.ndarray
    lam: float = 1e-4
    airlight: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def build_loss_context(img, params: DcpParams = DcpParams(), eps: float = 1e-6,
                       lam: float = 1e-4) -> LossContext:
    img = as_rgb(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"loss context needs an image of at least 3x3, got {img.shape[:2]}")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    a = estimate_airlight(img, params.patch)
    coarse = coarse_transmission(img, a, params)
    coarse.setflags(write=False)
    return LossContext(matting_weights(img, eps), coarse, lam, a)


def _check_t(ctx: LossContext, t) -> np.ndarray:
    t = as_map(t, "transmission")
    if t.shape != ctx.shape:
        raise ValueError(f"transmission shape {t.shape} does not match context {ctx.shape}")
    return t


def energy_terms(ctx: LossContext, t) -> tuple[float, float]:
    """Return ``(smoothness, fidelity)``; the energy is their sum."""
    t = _check_t(ctx, t)
    patches = t.ravel()[ctx.weights.window_index]  # (n, 9)
    t_i = patches[:, PAIR_I]  # T_I layout
    t_j = patches[:, PAIR_J]  # T_J layout
    smooth = 0.5 * np.sum(ctx.weights.weights * (t_i - t_j) ** 2)
    fidelity = ctx.lam * np.sum((t - ctx.coarse) ** 2)
    return float(smooth), float(fidelity)


def energy(ctx: LossContext, t) -> float:
    smooth, fidelity = energy_terms(ctx, t)
    return smooth + fidelity


def energy_gradient(ctx: LossContext, t) -> np.ndarray:
    """Exact gradient ``2 L t + 2 lam (t - t_coarse)``, accumulated window by window."""
    t = _check_t(ctx, t)
    win = ctx.weights.window_index
    patches = t.ravel()[win]
    blocks = ctx.weights.blocks()
    # d/dt_a of 1/2 sum_ij w_ij (t_i - t_j)^2 = 2 (t_a - sum_j w_aj t_j)
    local = 2.0 * (patches - np.einsum("nij,nj->ni", blocks, patches))
    grad = np.bincount(win.ravel(), weights=local.ravel(), minlength=t.size)
    grad = grad.reshape(t.shape) + 2.0 * ctx.lam * (t - ctx.coarse)
    return grad


def corpus_objective(contexts, ts, per_pixel: bool = False) -> float:
    """Mean energy over a corpus.

    ``per_pixel=True`` divides each energy by its pixel count first, which
    is useful for corpora of mixed resolution.
    """
    contexts, ts = list(contexts), list(ts)
    if not contexts:
        raise ValueError("empty corpus")
    if len(contexts) != len(ts):
        raise ValueError(f"{len(contexts)} contexts but {len(ts)} transmission maps")
    total = 0.0
    for ctx, t in zip(contexts, ts):
        e = energy(ctx, t)
        total += e / (ctx.shape[0] * ctx.shape[1]) if per_pixel else e
    return total / len(contexts)
