"""Layer descriptions and their forward passes built on :mod:`.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from .autodiff import Tensor, batchnorm, conv2d, dropout, maxpool2d

KINDS = ("conv", "pool", "dense", "batchnorm", "dropout", "lstm", "activation")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str = ""
    kernel: tuple[int, int] = (5, 5)
    stride: int = 1
    padding: int = 0
    channels_in: int = 0
    channels_out: int = 0
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "pool") and tuple(self.kernel) != (5, 5):
            raise ValueError(f"{self.kind} layers use 5x5 kernels, got {self.kernel}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.activation not in ("relu", "sigmoid", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")


def forward(layer: LayerSpec, x: Tensor, mode: str = "eval", seed=None,
            weights: dict | None = None, buffers: dict | None = None) -> Tensor:
    """Apply one layer.

    ``weights`` maps ``"w"``/``"b"`` (conv, dense) or ``"gamma"``/``"beta"``
    (batchnorm) to tensors; ``buffers`` holds batchnorm running ``"mean"`` and
    ``"var"`` arrays, updated in place in train mode. ``seed`` may be an int
    or a ``numpy.random.Generator`` and only matters for dropout.
    """
    train = mode == "train"
    weights = weights or {}
    kind = layer.kind
    try:
        if kind == "conv":
            w = weights["w"]
            if x.ndim != 4 or x.shape[3] != layer.channels_in or w.shape[3] != layer.channels_out:
                raise DimensionError(
                    f"layer {layer.name or kind}: input {x.shape} / kernel {w.shape} do not match "
                    f"{layer.channels_in}->{layer.channels_out} channels")
            return conv2d(x, w, weights.get("b"), pad=layer.padding)
        if kind == "pool":
            if x.ndim != 4:
                raise DimensionError(f"layer {layer.name or kind}: expected NHWC input, got {x.shape}")
            return maxpool2d(x, k=layer.kernel[0], stride=layer.stride, pad=layer.padding)
        if kind == "dense":
            w = weights["w"]
            if x.shape[-1] != w.shape[0]:
                raise DimensionError(f"layer {layer.name or kind}: input {x.shape} vs weight {w.shape}")
            out = x @ w
            return out + weights["b"] if "b" in weights else out
        if kind == "batchnorm":
            buffers = buffers or {}
            if x.shape[-1] != weights["gamma"].shape[0]:
                raise DimensionError(f"layer {layer.name or kind}: {x.shape[-1]} channels vs "
                                     f"{weights['gamma'].shape[0]} scale entries")
            return batchnorm(x, weights["gamma"], weights["beta"], buffers.get("mean"),
                             buffers.get("var"), train=train)
        if kind == "dropout":
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            return dropout(x, layer.dropout_rate, rng, train)
        if kind == "activation":
            return getattr(x, layer.activation)()
        if kind == "lstm":
            raise ValueError("lstm layers are stepped with lstm_step")
    except KeyError as exc:
        raise DimensionError(f"layer {layer.name or kind}: missing weight {exc}") from None
    raise ValueError(kind)


def lstm_step(params: dict, x_t: Tensor, h_prev: Tensor, c_prev: Tensor, xw_t: Tensor | None = None):
    """One LSTM cell update.

    ``params`` holds ``wx`` (D, 4H), ``wh`` (H, 4H) and ``b`` (4H,) with
    gate blocks ordered input, forget, candidate, output. ``xw_t`` may carry a
    precomputed ``x_t @ wx`` to avoid recomputing it per step.
    """
    wx, wh, b = params["wx"], params["wh"], params["b"]
    hidden = wh.shape[0]
    if h_prev.shape[-1] != hidden or c_prev.shape[-1] != hidden:
        raise DimensionError(f"lstm_step: state size {h_prev.shape[-1]}/{c_prev.shape[-1]} != hidden {hidden}")
    if xw_t is None:
        if x_t.shape[-1] != wx.shape[0]:
            raise DimensionError(f"lstm_step: input size {x_t.shape[-1]} != {wx.shape[0]}")
        xw_t = x_t @ wx
    z = xw_t + h_prev @ wh + b
    i = z[..., :hidden].sigmoid()
    f = z[..., hidden:2 * hidden].sigmoid()
    g = z[..., 2 * hidden:3 * hidden].tanh()
    o = z[..., 3 * hidden:].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c
