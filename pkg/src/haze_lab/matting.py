"""Closed-form matting weights, the sparse matting Laplacian and its solvers.

Only 3x3 windows lying entirely inside the image contribute. Each window
holds a symmetric 9x9 weight block

    w_ij = (1 + (I_i - mu)^T (Sigma + eps/9 * U3)^-1 (I_j - mu)) / 9

stored flattened as ``(n_windows, 81)``; pair slot ``k`` addresses pixel
``PAIR_I[k]`` against ``PAIR_J[k]`` of the window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .image import as_map, as_rgb

WINDOW = 9
PAIR_I = np.repeat(np.arange(WINDOW), WINDOW)  # 0,..,0,1,..,1,...,8,..,8
PAIR_J = np.tile(np.arange(WINDOW), WINDOW)  # 0,1,..,8,0,1,..,8,...


@dataclass(frozen=True)
class MattingWeights:
    shape: tuple[int, int]
    window_index: np.ndarray  # (n_windows, 9) linear pixel index of each window member
    weights: np.ndarray  # (n_windows, 81)

    @property
    def n_windows(self) -> int:
        return self.window_index.shape[0]

    def blocks(self) -> np.ndarray:
        return self.weights.reshape(-1, WINDOW, WINDOW)


def window_indices(height: int, width: int) -> np.ndarray:
    """Linear indices of every fully interior 3x3 window, row-major in both levels."""
    idx = np.arange(height * width).reshape(height, width)
    win = np.lib.stride_tricks.sliding_window_view(idx, (3, 3))
    return win.reshape(-1, WINDOW).copy()


def inv3_sym(m: np.ndarray) -> np.ndarray:
    """Inverse of a stack of symmetric 3x3 matrices by the adjugate."""
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    d, e = m[..., 1, 1], m[..., 1, 2]
    f = m[..., 2, 2]
    c00 = d * f - e * e
    c01 = c * e - b * f
    c02 = b * e - c * d
    c11 = a * f - c * c
    c12 = b * c - a * e
    c22 = a * d - b * b
    det = a * c00 + b * c01 + c * c02
    out = np.empty_like(m)
    out[..., 0, 0] = c00
    out[..., 0, 1] = out[..., 1, 0] = c01
    out[..., 0, 2] = out[..., 2, 0] = c02
    out[..., 1, 1] = c11
    out[..., 1, 2] = out[..., 2, 1] = c12
    out[..., 2, 2] = c22
    return out / det[..., None, None]


def matting_weights(img, eps: float = 1e-6) -> MattingWeights:
    img = as_rgb(img)
    h, w = img.shape[:2]
    if h < 3 or w < 3:
        raise ValueError(f"matting needs an image of at least 3x3, got {h}x{w}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    win = window_indices(h, w)
    colors = img.reshape(-1, 3)[win]  # (n, 9, 3)
    mu = colors.mean(axis=1, keepdims=True)
    dev = colors - mu
    cov = np.einsum("nki,nkj->nij", dev, dev) / WINDOW
    cov = cov + (eps / WINDOW) * np.eye(3)
    inv = inv3_sym(cov)
    quad = np.einsum("nia,nab,njb->nij", dev, inv, dev)
    blocks = (1.0 + quad) / WINDOW
    blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
    return MattingWeights((h, w), win, blocks.reshape(-1, WINDOW * WINDOW))


def assemble_laplacian(weights: MattingWeights) -> sp.csr_matrix:
    """Sparse ``L = sum_n (delta_ij - w^n_ij)`` over all windows."""
    n = weights.shape[0] * weights.shape[1]
    win = weights.window_index
    rows = win[:, PAIR_I].ravel()
    cols = win[:, PAIR_J].ravel()
    vals = (np.eye(WINDOW).ravel()[None, :] - weights.weights).ravel()
    lap = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    # a + b == b + a in floating point, so this is exactly symmetric
    lap = ((lap + lap.T) * 0.5).tocsr()
    lap.sum_duplicates()
    return lap


def matting_laplacian(img, eps: float = 1e-6) -> sp.csr_matrix:
    return assemble_laplacian(matting_weights(img, eps))


@dataclass
class SolveResult:
    t: np.ndarray
    iterations: int
    residual: float  # final relative residual ||b - A x|| / ||b||
    converged: bool


def pcg(a, b: np.ndarray, x0: np.ndarray, tol: float, max_iter: int):
    """Jacobi-preconditioned conjugate gradients for SPD ``a``.

    Returns ``(x, iterations, relative_residual, converged)``; when not
    converged, ``x`` is the iterate with the smallest residual seen.
    """
    inv_diag = 1.0 / a.diagonal()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, True
    x = x0.copy()
    r = b - a @ x
    rel = np.linalg.norm(r) / bnorm
    best_x, best_rel = x.copy(), rel
    if rel <= tol:
        return x, 0, rel, True
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rel = np.linalg.norm(r) / bnorm
        if rel < best_rel:
            best_x, best_rel = x.copy(), rel
        if rel <= tol:
            return x, it, rel, True
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, max_iter, best_rel, False


def refine_soft_matting(coarse, laplacian, lam: float = 1e-4, tol: float = 1e-6,
                        max_iter: int = 2000) -> SolveResult:
    """Minimize ``t^T L t + lam * ||t - coarse||^2`` by solving ``(L + lam I) t = lam coarse``."""
    coarse = as_map(coarse, "coarse transmission")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    n = coarse.size
    if laplacian.shape != (n, n):
        raise ValueError(f"Laplacian of shape {laplacian.shape} does not match a map of {n} pixels")
    system = (laplacian + lam * sp.identity(n, format="csr")).tocsr()
    b = lam * coarse.ravel()
    x, it, rel, ok = pcg(system, b, coarse.ravel(), tol, max_iter)
    return SolveResult(x.reshape(coarse.shape), it, float(rel), ok)


def box_mean(m: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window clipped to the image; works on trailing channels too."""
    h, w = m.shape[:2]
    ys = np.arange(h)
    xs = np.arange(w)
    y0, y1 = np.maximum(ys - radius, 0), np.minimum(ys + radius, h - 1) + 1
    x0, x1 = np.maximum(xs - radius, 0), np.minimum(xs + radius, w - 1) + 1
    integral = np.zeros((h + 1, w + 1) + m.shape[2:])
    integral[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)
    total = (integral[y1][:, x1] - integral[y0][:, x1]
             - integral[y1][:, x0] + integral[y0][:, x0])
    count = np.outer(y1 - y0, x1 - x0).astype(np.float64)
    if m.ndim > 2:
        count = count.reshape(count.shape + (1,) * (m.ndim - 2))
    return total / count


def refine_guided_filter(coarse, guide, radius: int = 20, eps_gf: float = 1e-3) -> np.ndarray:
    """Color guided filter of the coarse map, guided by the hazy image."""
    p = as_map(coarse, "coarse transmission")
    g = as_rgb(guide, "guide")
    if p.shape != g.shape[:2]:
        raise ValueError(f"coarse map {p.shape} and guide {g.shape[:2]} differ in size")
    if int(radius) != radius or radius < 1:
        raise ValueError(f"radius must be a positive integer, got {radius}")
    if not eps_gf > 0:
        raise ValueError(f"eps_gf must be positive, got {eps_gf}")
    mean_i = box_mean(g, radius)
    mean_p = box_mean(p, radius)
    mean_ip = box_mean(g * p[..., None], radius)
    cov_ip = mean_ip - mean_i * mean_p[..., None]
    corr = box_mean(np.einsum("hwi,hwj->hwij", g, g), radius)
    var = corr - np.einsum("hwi,hwj->hwij", mean_i, mean_i) + eps_gf * np.eye(3)
    a = np.einsum("hwij,hwj->hwi", inv3_sym(var), cov_ip)
    b = mean_p - np.einsum("hwi,hwi->hw", a, mean_i)
    return np.einsum("hwi,hwi->hw", box_mean(a, radius), g) + box_mean(b, radius)
