"""Dilated residual context-aggregation network for transmission prediction.

Layout: a 3x3 lifting conv (3 -> width) with BN and ReLU, then ``blocks``
residual blocks of ``conv-BN-ReLU, conv-BN-ReLU, dilated conv-BN`` whose
output is added to the block input, then a 1x1 linear projection to one
channel. The output is unbounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers

BN_MOMENTUM = 0.99


@dataclass(frozen=True)
class CanConfig:
    blocks: int = 6
    width: int = 32
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if len(self.dilations) != self.blocks:
            raise ValueError(f"need {self.blocks} dilations, got {len(self.dilations)}")
        if any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be positive, got {self.dilations}")

    @classmethod
    def with_blocks(cls, blocks: int, width: int = 32, kernel: int = 3) -> "CanConfig":
        """Config with dilations 1, 2, 4, ... doubling per block."""
        return cls(blocks, width, kernel, tuple(2 ** i for i in range(blocks)))


def receptive_field(cfg: CanConfig) -> int:
    """Receptive field side length, ``1 + sum (k - 1) * dilation`` over all convs."""
    k1 = cfg.kernel - 1
    lift = k1
    per_block = sum(2 * k1 + k1 * d for d in cfg.dilations)
    return 1 + lift + per_block


def _conv_names(cfg: CanConfig):
    """(prefix, in_channels, out_channels, dilation, has_bn) for each conv, in order."""
    yield "lift", 3, cfg.width, 1, True
    for i, d in enumerate(cfg.dilations):
        yield f"block{i}.conv1", cfg.width, cfg.width, 1, True
        yield f"block{i}.conv2", cfg.width, cfg.width, 1, True
        yield f"block{i}.dilated", cfg.width, cfg.width, d, True
    yield "out", cfg.width, 1, 1, False


@dataclass
class CanModel:
    config: CanConfig
    params: dict[str, np.ndarray]  # trainable tensors
    buffers: dict[str, np.ndarray] = field(default_factory=dict)  # BN running statistics

    def copy(self) -> "CanModel":
        return CanModel(self.config, {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.buffers.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        """All tensors in serialization order."""
        return {**self.params, **self.buffers}


def parameter_shapes(cfg: CanConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, cin, cout, _, has_bn in _conv_names(cfg):
        k = 1 if name == "out" else cfg.kernel
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)
        if has_bn:
            shapes[f"{name}.bn.gamma"] = (cout,)
            shapes[f"{name}.bn.beta"] = (cout,)
    return shapes


def buffer_shapes(cfg: CanConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for name, _, cout, _, has_bn in _conv_names(cfg):
        if has_bn:
            shapes[f"{name}.bn.running_mean"] = (cout,)
            shapes[f"{name}.bn.running_var"] = (cout,)
    return shapes


def init_model(cfg: CanConfig, rng: np.random.Generator, init_std: float = np.sqrt(0.1)) -> CanModel:
    """Normal(0, init_std) kernels, zero biases, identity batch norm.

    Values are rounded to float32 so the model survives serialization bitwise.
    """
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".weight"):
            params[name] = rng.normal(0.0, init_std, size=shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
        params[name] = params[name].astype(np.float32).astype(np.float64)
    buffers = {name: (np.ones(s) if name.endswith("var") else np.zeros(s))
               for name, s in buffer_shapes(cfg).items()}
    return CanModel(cfg, params, buffers)


def _conv_bn(model, name, x, dilation, train, relu, caches):
    p = model.params
    y, c_conv = layers.conv_forward(x, p[f"{name}.weight"], p[f"{name}.bias"], dilation)
    y, c_bn = layers.bn_forward(y, p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"],
                                model.buffers[f"{name}.bn.running_mean"],
                                model.buffers[f"{name}.bn.running_var"], train)
    mask = None
    if relu:
        y, mask = layers.relu_forward(y)
    caches[name] = (c_conv, c_bn, mask)
    return y


def forward(model: CanModel, x: np.ndarray, train: bool = False):
    """Run the network on a batch ``(N, 3, H, W)``; returns ``(t, cache)`` with ``t`` of shape ``(N, H, W)``.

    ``train=True`` normalizes with mini-batch statistics; running averages
    are left untouched (see :func:`update_running_stats`).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a batch of shape (N, 3, H, W), got {x.shape}")
    cfg = model.config
    caches: dict = {"train": train}
    h = _conv_bn(model, "lift", x, 1, train, True, caches)
    for i, d in enumerate(cfg.dilations):
        skip = h
        h = _conv_bn(model, f"block{i}.conv1", h, 1, train, True, caches)
        h = _conv_bn(model, f"block{i}.conv2", h, 1, train, True, caches)
        h = _conv_bn(model, f"block{i}.dilated", h, d, train, False, caches)
        h = h + skip
    out, caches["out"] = layers.conv_forward(h, model.params["out.weight"], model.params["out.bias"])
    return out[:, 0], caches


def _conv_bn_backward(name, dy, caches, grads):
    c_conv, c_bn, mask = caches[name]
    if mask is not None:
        dy = layers.relu_backward(dy, mask)
    dy, grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = layers.bn_backward(dy, c_bn)
    dx, grads[f"{name}.weight"], grads[f"{name}.bias"] = layers.conv_backward(dy, c_conv)
    return dx


def backward(model: CanModel, cache: dict, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given ``d loss / d t`` of shape ``(N, H, W)``."""
    if not cache or "out" not in cache:
        raise RuntimeError("backward needs the cache of a preceding forward pass")
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(upstream, dtype=np.float64)[:, None]
    dh, grads["out.weight"], grads["out.bias"] = layers.conv_backward(dy, cache["out"])
    for i in reversed(range(model.config.blocks)):
        dskip = dh
        dh = _conv_bn_backward(f"block{i}.dilated", dh, cache, grads)
        dh = _conv_bn_backward(f"block{i}.conv2", dh, cache, grads)
        dh = _conv_bn_backward(f"block{i}.conv1", dh, cache, grads)
        dh = dh + dskip
    _conv_bn_backward("lift", dh, cache, grads)
    return {k: grads[k] for k in model.params}


def update_running_stats(model: CanModel, cache: dict, momentum: float = BN_MOMENTUM) -> None:
    """Fold the mini-batch statistics of a train-mode forward into the running averages."""
    for name, entry in cache.items():
        if name in ("train", "out"):
            continue
        _, (_, _, _, mean, var, _), _ = entry
        rm = model.buffers[f"{name}.bn.running_mean"]
        rv = model.buffers[f"{name}.bn.running_var"]
        rm[...] = momentum * rm + (1.0 - momentum) * mean
        rv[...] = momentum * rv + (1.0 - momentum) * var


def predict_transmission(model: CanModel, img: np.ndarray) -> np.ndarray:
    """Inference-mode forward on a single ``(H, W, 3)`` image."""
    x = np.asarray(img, dtype=np.float64).transpose(2, 0, 1)[None]
    t, _ = forward(model, x, train=False)
    return t[0]
