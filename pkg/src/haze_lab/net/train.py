"""Unsupervised training of the network against the DCP energy."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..dcp import DcpParams
from ..image import as_rgb
from ..loss import build_loss_context, energy, energy_gradient
from .adam import Adam
from .model import CanConfig, CanModel, backward, forward, init_model, update_running_stats

log = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    def __init__(self, image: str, epoch: int, step: int):
        super().__init__(f"non-finite loss on image {image} (epoch {epoch}, step {step})")
        self.image = image


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 24
    lr: float = 3e-4
    lr_decay: float = 0.96
    decay_epochs: int = 3
    epochs: int = 30
    seed: int = 0
    init_std: float = math.sqrt(0.1)
    max_steps: int | None = None  # optional cap on total optimizer steps
    eps: float = 1e-6
    lam: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.decay_epochs < 1:
            raise ValueError(f"decay_epochs must be >= 1, got {self.decay_epochs}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_epochs)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float  # mean over the epoch's steps of the batch-mean energy
    steps: int
    val_psnr: float | None = None
    val_ssim: float | None = None

    def to_line(self) -> str:
        parts = [f"epoch={self.epoch}", f"lr={self.lr!r}", f"steps={self.steps}",
                 f"train_loss={self.train_loss!r}"]
        if self.val_psnr is not None:
            parts += [f"val_psnr={self.val_psnr!r}", f"val_ssim={self.val_ssim!r}"]
        return " ".join(parts)


@dataclass
class TrainResult:
    model: CanModel
    epochs: list[EpochMetrics]
    step_losses: list[float] = field(default_factory=list)
    reports: list = field(default_factory=list)  # per-epoch EvalReport when validating
    snapshots: list[CanModel] = field(default_factory=list)


def _round_f32(arrays: dict[str, np.ndarray]) -> None:
    for a in arrays.values():
        a[...] = a.astype(np.float32)


def batch_loss(model: CanModel, batch: np.ndarray, contexts, train: bool = True):
    """Mean DCP energy of a batch and the network outputs.

    A non-finite network output scores an infinite energy.
    """
    t, cache = forward(model, batch, train=train)
    losses = [energy(ctx, ti) if np.all(np.isfinite(ti)) else math.inf
              for ctx, ti in zip(contexts, t)]
    return float(np.mean(losses)), losses, t, cache


def train(corpus, can_cfg: CanConfig = CanConfig(), train_cfg: TrainConfig = TrainConfig(),
          dcp: DcpParams = DcpParams(), names=None, val_pairs=None,
          keep_snapshots: bool = False) -> TrainResult:
    """Adam on mini-batches of the corpus-mean DCP energy.

    Loss contexts are computed once per image. Images in a batch must
    share a size. Parameters are kept float32-representable after every
    update so a saved model reloads bitwise.
    """
    from ..metrics import validate

    corpus = [as_rgb(img) for img in corpus]
    if not corpus:
        raise ValueError("empty training corpus")
    names = list(names) if names is not None else [f"image{i:04d}" for i in range(len(corpus))]
    contexts = [build_loss_context(img, dcp, train_cfg.eps, train_cfg.lam) for img in corpus]
    inputs = [img.transpose(2, 0, 1) for img in corpus]

    rng = np.random.default_rng(train_cfg.seed)
    model = init_model(can_cfg, rng, train_cfg.init_std)
    opt = Adam(model.params)
    result = TrainResult(model, [])
    total_steps = 0
    m = len(corpus)
    for epoch in range(train_cfg.epochs):
        lr = train_cfg.lr_at(epoch)
        order = rng.permutation(m)
        losses = []
        for start in range(0, m, train_cfg.batch_size):
            if train_cfg.max_steps is not None and total_steps >= train_cfg.max_steps:
                break
            idx = order[start:start + train_cfg.batch_size]
            batch = np.stack([inputs[i] for i in idx])
            ctxs = [contexts[i] for i in idx]
            loss, per_image, t, cache = batch_loss(model, batch, ctxs)
            for i, e in zip(idx, per_image):
                if not np.isfinite(e):
                    raise NonFiniteLossError(names[i], epoch, total_steps)
            upstream = np.stack([energy_gradient(c, ti) for c, ti in zip(ctxs, t)]) / len(idx)
            grads = backward(model, cache, upstream)
            opt.step(model.params, grads, lr)
            _round_f32(model.params)
            update_running_stats(model, cache)
            _round_f32(model.buffers)
            losses.append(loss)
            total_steps += 1
        if not losses:
            break
        metrics = EpochMetrics(epoch, lr, float(np.mean(losses)), len(losses))
        result.step_losses.extend(losses)
        if val_pairs:
            rep = validate(model, val_pairs, dcp)
            result.reports.append(rep)
            metrics.val_psnr, metrics.val_ssim = rep.mean_psnr, rep.mean_ssim
        if keep_snapshots:
            result.snapshots.append(model.copy())
        log.info(metrics.to_line())
        result.epochs.append(metrics)
    return result


def corpus_loss(model: CanModel, corpus, dcp: DcpParams = DcpParams(), train: bool = False,
                eps: float = 1e-6, lam: float = 1e-4, contexts=None) -> list[float]:
    """Per-image DCP energy of the model's transmission maps (inference mode by default)."""
    corpus = [as_rgb(img) for img in corpus]
    if contexts is None:
        contexts = [build_loss_context(img, dcp, eps, lam) for img in corpus]
    out = []
    for img, ctx in zip(corpus, contexts):
        t, _ = forward(model, img.transpose(2, 0, 1)[None], train=train)
        out.append(energy(ctx, t[0]))
    return out
