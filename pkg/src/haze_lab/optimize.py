"""Per-image transmission estimation by gradient descent on the DCP energy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .dcp import DcpParams, recover_radiance
from .image import as_rgb
from .loss import LossContext, build_loss_context
from .matting import assemble_laplacian

DIVERGENCE_PATIENCE = 10


@dataclass(frozen=True)
class OptimizeConfig:
    """Descent settings. ``step_size=None`` picks a step that guarantees descent.

    ``init`` is ``"coarse"`` or a float giving a constant starting map.
    Descent stops after ``max_steps`` or once a step lowers the energy by
    less than ``stop_energy_rel`` times the current energy.
    """

    step_size: float | None = None
    max_steps: int = 500
    stop_energy_rel: float = 0.0
    init: str | float = "coarse"
    grad_tol: float = 0.0  # stop once |grad|_inf <= grad_tol * initial |grad|_inf

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if not 0 <= self.stop_energy_rel < 1:
            raise ValueError(f"stop_energy_rel must lie in [0, 1), got {self.stop_energy_rel}")
        if self.grad_tol < 0:
            raise ValueError(f"grad_tol must be >= 0, got {self.grad_tol}")
        if self.init != "coarse" and not isinstance(self.init, (int, float)):
            raise ValueError(f"init must be 'coarse' or a number, got {self.init!r}")


@dataclass
class OptimizeResult:
    t: np.ndarray
    trace: list[float]  # energy before the first step, then after each step
    steps: int
    diverged: bool = False


def curvature_bound(ctx: LossContext, lap=None) -> float:
    """Upper bound on the largest eigenvalue of ``L + lam I``.

    Lanczos estimate padded by a relative margin; falls back to the
    Gershgorin bound (max absolute row sum of L) if Lanczos fails.
    """
    if lap is None:
        lap = assemble_laplacian(ctx.weights)
    gersh = float(np.asarray(abs(lap).sum(axis=1)).max(initial=0.0))
    if lap.shape[0] > 2:
        try:
            top = eigsh(lap, k=1, which="LA", return_eigenvectors=False, tol=1e-8,
                        v0=np.ones(lap.shape[0]))[0]
            return ctx.lam + min(gersh, float(top) * (1 + 1e-4) + 1e-12)
        except ArpackNoConvergence:
            pass
    return ctx.lam + gersh


def auto_step(ctx: LossContext, lap=None) -> float:
    # Hessian is 2 (L + lam I); any step below 1 / bound keeps descent monotone
    return 0.9 / curvature_bound(ctx, lap)


def optimize_transmission(ctx: LossContext, cfg: OptimizeConfig = OptimizeConfig()) -> OptimizeResult:
    """Plain gradient descent from the configured start, returning the best iterate.

    The Laplacian is assembled from the context weights once so that each
    step costs a single sparse product; it yields the same energy and
    gradient as the windowed form in :mod:`haze_lab.loss`.
    """
    if cfg.init == "coarse":
        t = np.array(ctx.coarse, dtype=np.float64).ravel()
    else:
        t = np.full(ctx.shape[0] * ctx.shape[1], float(cfg.init))
    lap = assemble_laplacian(ctx.weights)
    coarse = ctx.coarse.ravel()
    lam = ctx.lam
    step = cfg.step_size if cfg.step_size is not None else auto_step(ctx, lap)
    # t^T L t = -sum_{i<j} L_ij (t_i - t_j)^2 since L has zero row sums;
    # the difference form avoids cancellation near the minimum
    upper = sp.triu(lap, k=1).tocoo()
    pi, pj, pw = upper.row, upper.col, -upper.data

    def energy_and_grad(x):
        lx = lap @ x
        r = x - coarse
        smooth = pw @ (x[pi] - x[pj]) ** 2
        return float(smooth + lam * (r @ r)), 2.0 * (lx + lam * r)

    e, g = energy_and_grad(t)
    g0 = np.abs(g).max()
    trace = [e]
    best_t, best_e = t.copy(), e
    rising = 0
    steps = 0
    diverged = False
    while steps < cfg.max_steps:
        if cfg.grad_tol > 0 and np.abs(g).max() <= cfg.grad_tol * g0:
            break
        t = t - step * g
        steps += 1
        e_new, g = energy_and_grad(t)
        trace.append(e_new)
        if not np.isfinite(e_new):
            diverged = True
            break
        if e_new < best_e:
            best_t, best_e = t.copy(), e_new
        rising = rising + 1 if e_new > e else 0
        if rising >= DIVERGENCE_PATIENCE:
            diverged = True
            break
        decrease = e - e_new
        e = e_new
        if cfg.stop_energy_rel > 0 and 0 <= decrease <= cfg.stop_energy_rel * e:
            break
    return OptimizeResult(best_t.reshape(ctx.shape), trace, steps, diverged)


def dehaze_by_optimization(img, params: DcpParams = DcpParams(),
                           cfg: OptimizeConfig = OptimizeConfig(), eps: float = 1e-6,
                           lam: float = 1e-4) -> tuple[np.ndarray, OptimizeResult]:
    """Coarse transmission, descent on the DCP energy, then radiance recovery."""
    img = as_rgb(img)
    ctx = build_loss_context(img, params, eps, lam)
    res = optimize_transmission(ctx, cfg)
    return recover_radiance(img, res.t, ctx.airlight, params.t0), res
