"""The multitask network: CNN frame embedder, two LSTM branches, four linear heads.

Parameter names are flat strings grouped by prefix (``cnn.``, ``rnn1.``,
``rnn2.``, ``heads.``); the training loop freezes and updates by prefix.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError
from .numerics import LayerSpec, Tensor, forward, lstm_step, stack

TASK_OUTPUTS = {"area": 2, "dim": 3, "rwt": 6}
REGRESSION_TASKS = tuple(TASK_OUTPUTS)
N_TARGETS = sum(TASK_OUTPUTS.values())
PHASE_BRANCH = ("rnn2.", "heads.w_phase", "heads.b_phase")


@dataclass(frozen=True)
class ArchConfig:
    input_size: int = 75
    channels: tuple = (8, 16, 32)
    pool_stride: int = 3
    pool_pad: int = 1
    embed_dim: int = 100
    hidden: int = 100
    dropout_rate: float = 0.5

    def feature_size(self) -> int:
        n = self.input_size
        for _ in range(2):
            n = (n + 2 * self.pool_pad - 5) // self.pool_stride + 1
            if n <= 0:
                raise DimensionError(f"input size {self.input_size} collapses to nothing under pooling")
        return n

    def layers(self):
        c1, c2, c3 = self.channels
        pool = dict(kind="pool", stride=self.pool_stride, padding=self.pool_pad)
        return [
            LayerSpec("conv", "conv1", padding=2, channels_in=1, channels_out=c1),
            LayerSpec("batchnorm", "bn1"), LayerSpec("activation", "relu1"), LayerSpec(name="pool1", **pool),
            LayerSpec("conv", "conv2", padding=2, channels_in=c1, channels_out=c2),
            LayerSpec("batchnorm", "bn2"), LayerSpec("activation", "relu2"), LayerSpec(name="pool2", **pool),
            LayerSpec("conv", "conv3", padding=2, channels_in=c2, channels_out=c3),
            LayerSpec("batchnorm", "bn3"), LayerSpec("activation", "relu3"),
            LayerSpec("dropout", "drop", dropout_rate=self.dropout_rate),
            LayerSpec("dense", "dense"),
        ]

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


REDUCED_ARCH = ArchConfig(input_size=8, channels=(2, 3, 4), pool_pad=2, hidden=4)


def param_shapes(arch: ArchConfig) -> dict:
    c1, c2, c3 = arch.channels
    n = arch.feature_size()
    H, D = arch.hidden, arch.embed_dim
    shapes = {
        "cnn.conv1.w": (5, 5, 1, c1), "cnn.bn1.gamma": (c1,), "cnn.bn1.beta": (c1,),
        "cnn.conv2.w": (5, 5, c1, c2), "cnn.bn2.gamma": (c2,), "cnn.bn2.beta": (c2,),
        "cnn.conv3.w": (5, 5, c2, c3), "cnn.bn3.gamma": (c3,), "cnn.bn3.beta": (c3,),
        "cnn.dense.w": (n * n * c3, D), "cnn.dense.b": (D,),
    }
    for br in ("rnn1", "rnn2"):
        shapes.update({f"{br}.wx": (D, 4 * H), f"{br}.wh": (H, 4 * H), f"{br}.b": (4 * H,)})
    for task, k in TASK_OUTPUTS.items():
        shapes[f"heads.w_{task}"] = (k, H)
        shapes[f"heads.b_{task}"] = (k,)
    shapes["heads.w_phase"] = (1, H)
    shapes["heads.b_phase"] = (1,)
    return shapes


@dataclass
class ModelParams:
    arch: ArchConfig
    arrays: dict
    buffers: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.arrays.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.arch, {k: v.astype(dtype) for k, v in self.arrays.items()},
                           {k: v.astype(dtype) for k, v in self.buffers.items()})

    def group(self, prefix) -> dict:
        prefixes = (prefix,) if isinstance(prefix, str) else tuple(prefix)
        return {k: v for k, v in self.arrays.items() if k.startswith(prefixes)}

    def bind(self, trainable=()) -> "Bound":
        """Wrap arrays as tensors; names starting with a ``trainable`` prefix get gradients."""
        trainable = tuple(trainable)
        tensors = {k: Tensor(v, requires_grad=bool(trainable) and k.startswith(trainable), name=k)
                   for k, v in self.arrays.items()}
        return Bound(self.arch, tensors, self.buffers)

    def digest(self, prefix=()) -> str:
        h = hashlib.sha256()
        for k in sorted(self.arrays):
            if not prefix or k.startswith(tuple(prefix)):
                h.update(k.encode())
                h.update(np.ascontiguousarray(self.arrays[k]).tobytes())
        return h.hexdigest()


@dataclass
class Bound:
    arch: ArchConfig
    tensors: dict
    buffers: dict

    def __getitem__(self, name):
        return self.tensors[name]


def _bound(params) -> Bound:
    return params if isinstance(params, Bound) else params.bind()


@dataclass
class Predictions:
    """Per-frame estimates, each shaped (B, F, ...), in normalized units.

    ``area_hat`` comes from the area head, ``dim_hat`` from the dim head and
    ``rwt_hat`` from the rwt head (all fed by rnn1); ``p_diastole`` and
    ``phase_logit`` come from the phase head fed by rnn2.
    """

    area_hat: Tensor
    dim_hat: Tensor
    rwt_hat: Tensor
    p_diastole: Tensor
    phase_logit: Tensor

    def regression(self, task: str) -> Tensor:
        return {"area": self.area_hat, "dim": self.dim_hat, "rwt": self.rwt_hat}[task]

    def as_array(self) -> np.ndarray:
        """(B, F, 12) array laid out like the label matrix, phase column = P(systole)."""
        return np.concatenate([self.area_hat.data, self.dim_hat.data, self.rwt_hat.data,
                               1.0 - self.p_diastole.data[..., None]], axis=-1)


def init_params(seed: int = 0, arch: ArchConfig = ArchConfig(), dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(arch).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            arr = np.ones(shape)
        elif leaf == "beta" or len(shape) == 1:
            arr = np.zeros(shape)
        else:
            if len(shape) == 4:
                rf = shape[0] * shape[1]
                fan_in, fan_out = rf * shape[2], rf * shape[3]
            elif name.startswith("heads."):
                fan_out, fan_in = shape
            else:
                fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-lim, lim, size=shape)
        arrays[name] = arr.astype(dtype)
    H = arch.hidden
    for br in ("rnn1", "rnn2"):
        arrays[f"{br}.b"][H:2 * H] = 1.0
    buffers = {}
    for i, c in enumerate(arch.channels, start=1):
        buffers[f"cnn.bn{i}.mean"] = np.zeros(c, dtype=dtype)
        buffers[f"cnn.bn{i}.var"] = np.ones(c, dtype=dtype)
    # per-output affine map between head outputs and normalized targets; set by training
    buffers["targets.mean"] = np.zeros(N_TARGETS, dtype=dtype)
    buffers["targets.std"] = np.ones(N_TARGETS, dtype=dtype)
    return ModelParams(arch, arrays, buffers)


def cnn_embed(images, params, mode: str = "eval", seed=None) -> Tensor:
    """Embed N images of shape (S, S) into (N, embed_dim)."""
    p = _bound(params)
    arch = p.arch
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images))
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[1:] != (arch.input_size, arch.input_size):
        raise DimensionError(f"cnn_embed expects (N, {arch.input_size}, {arch.input_size}) images, got {x.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = x.reshape(*x.shape, 1)
    for layer in arch.layers():
        prefix = f"cnn.{layer.name}"
        if layer.kind == "conv":
            x = forward(layer, x, mode, weights={"w": p[f"{prefix}.w"]})
        elif layer.kind == "batchnorm":
            x = forward(layer, x, mode, weights={"gamma": p[f"{prefix}.gamma"], "beta": p[f"{prefix}.beta"]},
                        buffers={"mean": p.buffers.get(f"{prefix}.mean"), "var": p.buffers.get(f"{prefix}.var")})
        elif layer.kind == "dense":
            x = x.reshape(x.shape[0], -1)
            x = forward(layer, x, mode, weights={"w": p[f"{prefix}.w"], "b": p[f"{prefix}.b"]})
        else:
            x = forward(layer, x, mode, seed=rng)
    return x


def rnn_forward(branch: str, embeddings, params) -> Tensor:
    """Run one LSTM branch over (B, F, D) embeddings from a zero state; returns (B, F, H)."""
    if branch not in ("rnn1", "rnn2"):
        raise ValueError(f"unknown branch {branch!r}")
    p = _bound(params)
    e = embeddings if isinstance(embeddings, Tensor) else Tensor(np.asarray(embeddings))
    if e.ndim == 2:
        e = e.reshape(1, *e.shape)
    if e.ndim != 3 or e.shape[1] == 0:
        raise DimensionError(f"rnn_forward needs a non-empty (B, F, D) sequence, got {e.shape}")
    w = {"wx": p[f"{branch}.wx"], "wh": p[f"{branch}.wh"], "b": p[f"{branch}.b"]}
    if e.shape[2] != w["wx"].shape[0]:
        raise DimensionError(f"{branch}: embedding size {e.shape[2]} != {w['wx'].shape[0]}")
    B, F = e.shape[:2]
    H = p.arch.hidden
    xw = e @ w["wx"]
    h = Tensor(np.zeros((B, H), dtype=e.dtype))
    c = Tensor(np.zeros((B, H), dtype=e.dtype))
    states = []
    for f in range(F):
        h, c = lstm_step(w, None, h, c, xw_t=xw[:, f])
        states.append(h)
    return stack(states, axis=1)


def _linear(h: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if h.shape[-1] != w.shape[1]:
        raise DimensionError(f"head expects {w.shape[1]} features, got {h.shape[-1]}")
    return h @ w.T + b


def estimate_heads(h1, h2, params) -> Predictions:
    p = _bound(params)
    h1 = h1 if isinstance(h1, Tensor) else Tensor(np.asarray(h1))
    h2 = h2 if isinstance(h2, Tensor) else Tensor(np.asarray(h2))
    area = _linear(h1, p["heads.w_area"], p["heads.b_area"])
    dim = _linear(h1, p["heads.w_dim"], p["heads.b_dim"])
    rwt = _linear(h1, p["heads.w_rwt"], p["heads.b_rwt"])
    logit = _linear(h2, p["heads.w_phase"], p["heads.b_phase"])
    logit = logit.reshape(logit.shape[:-1])
    # P(diastole) = 1 / (1 + exp(logit)) = sigmoid(-logit)
    return Predictions(area, dim, rwt, (-logit).sigmoid(), logit)


def forward_sequence(frames, params, mode: str = "eval", seed=None) -> Predictions:
    """Frames (B, F, S, S) or (F, S, S) -> per-frame predictions (B, F, ...)."""
    p = _bound(params)
    x = np.asarray(frames.data if isinstance(frames, Tensor) else frames)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"forward_sequence expects (B, F, S, S) frames, got {x.shape}")
    B, F = x.shape[:2]
    emb = cnn_embed(x.reshape(B * F, *x.shape[2:]), p, mode, seed)
    emb = emb.reshape(B, F, emb.shape[-1])
    return estimate_heads(rnn_forward("rnn1", emb, p), rnn_forward("rnn2", emb, p), p)
