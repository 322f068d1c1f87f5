"""Encoder with video-to-query and video-to-text heads, trained by hand-written backprop.

The encoder is a small MLP standing in for a video backbone. Its output f_v
feeds two linear heads whose softmax outputs are the query distribution p_q
(over K queries) and the text distribution p_t (over M prototypes).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blob
from .errors import InvalidInput, InvalidState, NonFiniteGradient, NumericalFloorWarning, ParseError
from .numerics import softmax_with_temperature

LOG_FLOOR = 1e-12

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, h: 1.0 - h * h),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a, h: (a > 0).astype(np.float64)),
    "linear": (lambda a: a, lambda a, h: np.ones_like(a)),
}


@dataclass
class ModelParams:
    """Named parameter tensors plus matching momentum buffers.

    Encoder layer ``l`` lives under ``W{l}`` / ``b{l}``; the heads are ``v2q``
    (D x K) and ``v2t`` (D x M). ``version`` increments on every update so
    stale forward records can be detected.
    """

    tensors: dict[str, np.ndarray]
    activations: list[str]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    def __post_init__(self):
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise InvalidInput(f"unknown activation {a!r}")
        if not self.buffers:
            self.buffers = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        d = self.v2q_weight.shape[0]
        if self.v2t_weight.shape[0] != d or self.feature_dim != d:
            raise InvalidInput("encoder output does not match head input dimension")

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    @property
    def encoder_layers(self):
        return [(self.tensors[f"W{l}"], self.tensors[f"b{l}"], self.activations[l])
                for l in range(self.n_layers)]

    @property
    def v2q_weight(self) -> np.ndarray:
        return self.tensors["v2q"]

    @property
    def v2t_weight(self) -> np.ndarray:
        return self.tensors["v2t"]

    @property
    def input_dim(self) -> int:
        return self.tensors["W0"].shape[0] if self.n_layers else self.v2q_weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.tensors[f"W{self.n_layers - 1}"].shape[1] if self.n_layers else self.input_dim

    @property
    def n_queries(self) -> int:
        return self.v2q_weight.shape[1]

    @property
    def n_prototypes(self) -> int:
        return self.v2t_weight.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, list(self.activations),
                           {k: v.copy() for k, v in self.buffers.items()}, self.version)

    def equals(self, other: "ModelParams") -> bool:
        """Bit-level equality of tensors and buffers."""
        return (self.activations == other.activations
                and self.tensors.keys() == other.tensors.keys()
                and all(self.tensors[k].tobytes() == other.tensors[k].tobytes()
                        and self.buffers[k].tobytes() == other.buffers[k].tobytes()
                        for k in self.tensors))


def init_params(input_dim: int, n_queries: int, n_prototypes: int, hidden=(64, 64),
                activation: str = "tanh", seed: int = 0) -> ModelParams:
    """LeCun-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    fan_in = input_dim
    for l, width in enumerate(hidden):
        tensors[f"W{l}"] = rng.standard_normal((fan_in, width)) / np.sqrt(fan_in)
        tensors[f"b{l}"] = np.zeros(width)
        fan_in = width
    tensors["v2q"] = rng.standard_normal((fan_in, n_queries)) / np.sqrt(fan_in)
    tensors["v2t"] = rng.standard_normal((fan_in, n_prototypes)) / np.sqrt(fan_in)
    return ModelParams(tensors, [activation] * len(hidden))


@dataclass
class ForwardRecord:
    f_v: np.ndarray
    p_q: np.ndarray
    p_t: np.ndarray
    # per layer: (input, pre-activation, output)
    cache: list = field(repr=False, default_factory=list)
    params_version: int = 0


def forward(params: ModelParams, x) -> ForwardRecord:
    """Encode one input vector or a batch of them and evaluate both heads."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != params.input_dim:
        raise InvalidInput(f"input dimension {h.shape[-1]} != {params.input_dim}")
    cache = []
    for W, b, act in params.encoder_layers:
        a = h @ W + b
        out = _ACTIVATIONS[act][0](a)
        cache.append((h, a, out))
        h = out
    p_q = softmax_with_temperature(h @ params.v2q_weight)
    p_t = softmax_with_temperature(h @ params.v2t_weight)
    if single:
        return ForwardRecord(h[0], p_q[0], p_t[0], cache, params.version)
    return ForwardRecord(h, p_q, p_t, cache, params.version)


def _cross_entropy(p, target):
    p = np.asarray(p, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if p.shape != target.shape:
        raise InvalidInput(f"shape mismatch: {p.shape} vs {target.shape}")
    used = target > 0
    if np.any(p[used] < LOG_FLOOR):
        warnings.warn("probability clamped at 1e-12 inside log", NumericalFloorWarning, stacklevel=3)
    loss = -np.sum(np.where(used, target * np.log(np.maximum(p, LOG_FLOOR)), 0.0), axis=-1)
    return float(loss) if np.ndim(loss) == 0 else loss


def loss_query(p_q, y_q):
    """-log p_q at the hot index of ``y_q`` (row-wise for batches)."""
    return _cross_entropy(p_q, y_q)


def loss_text(p_t, target):
    """Soft-target cross-entropy -sum(target * log p_t)."""
    return _cross_entropy(p_t, target)


def batch_loss(record: ForwardRecord, query_target, text_target, w_q=1.0, w_t=1.0) -> float:
    """Mean over the batch of w_q * CE_q + w_t * CE_t (the quantity ``backward`` differentiates)."""
    lq = np.atleast_1d(loss_query(record.p_q, query_target))
    lt = np.atleast_1d(loss_text(record.p_t, text_target))
    return float(np.mean(w_q * lq + w_t * lt))


def backward(params: ModelParams, record: ForwardRecord, query_target, text_target,
             w_q=1.0, w_t=1.0) -> dict[str, np.ndarray]:
    """Gradients of ``batch_loss`` w.r.t. every tensor.

    Targets are constants. ``w_q`` / ``w_t`` may be scalars or per-sample
    weights; each target row must sum to one.
    """
    if record.params_version != params.version:
        raise InvalidState("forward record was produced by an older parameter version")
    p_q, p_t, f_v = (np.atleast_2d(a) for a in (record.p_q, record.p_t, record.f_v))
    tq = np.atleast_2d(np.asarray(query_target, dtype=np.float64))
    tt = np.atleast_2d(np.asarray(text_target, dtype=np.float64))
    if tq.shape != p_q.shape or tt.shape != p_t.shape:
        raise InvalidInput("target shapes do not match the forward record")
    n = len(p_q)
    wq = np.broadcast_to(np.asarray(w_q, dtype=np.float64), (n,))[:, None]
    wt = np.broadcast_to(np.asarray(w_t, dtype=np.float64), (n,))[:, None]
    dq = wq * (p_q - tq) / n
    dt = wt * (p_t - tt) / n
    grads = {"v2q": f_v.T @ dq, "v2t": f_v.T @ dt}
    dh = dq @ params.v2q_weight.T + dt @ params.v2t_weight.T
    for l in range(params.n_layers - 1, -1, -1):
        h_in, a, out = record.cache[l]
        if h_in.ndim == 1:
            h_in, a, out = h_in[None], a[None], out[None]
        da = dh * _ACTIVATIONS[params.activations[l]][1](a, out)
        grads[f"W{l}"] = h_in.T @ da
        grads[f"b{l}"] = da.sum(axis=0)
        dh = da @ params.tensors[f"W{l}"].T
    return grads


def sgd_momentum_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float,
                      momentum: float = 0.9, weight_decay: float = 0.0, step=None) -> ModelParams:
    """In-place update: buf = momentum*buf + grad + wd*param; param -= lr*buf.

    All gradients are validated before anything is touched, so a
    NonFiniteGradient leaves the parameters as they were.
    """
    if not lr > 0 or not 0 <= momentum < 1 or weight_decay < 0:
        raise InvalidInput("need lr > 0, 0 <= momentum < 1, weight_decay >= 0")
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidInput(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name, step)
    for name, p in params.tensors.items():
        buf = params.buffers[name]
        buf *= momentum
        buf += grads[name]
        if weight_decay:
            buf += weight_decay * p
        p -= lr * buf
    params.version += 1
    return params


def save_checkpoint(path, params: ModelParams, step: int = 0, rng_state=None,
                    extra: dict | None = None, extra_arrays: dict | None = None) -> None:
    """``<path>.json`` manifest plus ``<path>.bin`` tensor blob; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in params.tensors.items()}
    arrays.update({f"buffer/{k}": v for k, v in params.buffers.items()})
    arrays.update({f"extra/{k}": v for k, v in (extra_arrays or {}).items()})
    manifest = {
        "format": "bical-checkpoint", "version": 1,
        "activations": params.activations,
        "shapes": {k: list(v.shape) for k, v in params.tensors.items()},
        "params_version": params.version,
        "step": step, "rng_state": rng_state, "extra": extra or {},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                          encoding="utf-8")
    blob.save(path.with_suffix(".bin"), arrays)


def load_checkpoint(path):
    """Returns (params, manifest, extra_arrays)."""
    path = Path(path)
    mpath = path.with_suffix(".json")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=mpath, line=exc.lineno) from None
    if manifest.get("format") != "bical-checkpoint":
        raise ParseError("not a checkpoint manifest", path=mpath)
    arrays = blob.load(path.with_suffix(".bin"))
    tensors, buffers, extra = {}, {}, {}
    for key, arr in arrays.items():
        kind, _, name = key.partition("/")
        {"param": tensors, "buffer": buffers, "extra": extra}[kind][name] = arr.copy()
    for name, shape in manifest["shapes"].items():
        if name not in tensors or list(tensors[name].shape) != shape:
            raise ParseError(f"tensor {name} missing or mis-shaped", path=path.with_suffix(".bin"))
    params = ModelParams(tensors, manifest["activations"], buffers, manifest["params_version"])
    return params, manifest, extra
