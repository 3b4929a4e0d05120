"""Tiny differentiable models over a flat parameter vector.

Three kinds are supported:

``linear``
    ``y = W x + b`` with ``W`` of shape (out, in).
``mlp1``
    one hidden layer, ``y = W2 act(W1 x + b1) + b2``.
``attn_toy``
    single-head attention pooling over input features. Feature ``j`` becomes
    the token ``t_j = x_j * U[:, j]``; a learned query ``q`` attends over
    keys ``Wk t_j`` and pools values ``Wv t_j``; ``y = Wo z + bo``.

Parameters are packed block by block in the order listed in
:func:`param_layout`, each block row-major. Gradients are derived by hand;
:func:`finite_diff_grad` is the independent check.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

KINDS = ("linear", "mlp1", "attn_toy")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}", field="kind")
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigError("input_dim and output_dim must be positive", field="input_dim")
        if self.kind != "linear" and self.hidden_dim <= 0:
            raise ConfigError(f"{self.kind} needs hidden_dim > 0", field="hidden_dim")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", field="activation")

    def to_dict(self) -> dict:
        return asdict(self)

    def spec_hash(self) -> str:
        """Stable 32-hex-digit fingerprint of the fields that shape the model."""
        fields = self.to_dict()
        if self.kind == "linear":
            fields["hidden_dim"] = 0
        if self.kind != "mlp1":
            fields["activation"] = "tanh"
        blob = json.dumps(fields, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:32]


@dataclass(frozen=True, eq=False)
class Batch:
    """Inputs plus either float regression targets or integer class labels."""

    inputs: np.ndarray
    targets: np.ndarray
    task_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionError("inputs must be a (batch, input_dim) matrix")
        t = np.asarray(self.targets)
        if t.shape[0] != x.shape[0]:
            raise DimensionError(f"{x.shape[0]} input rows but {t.shape[0]} targets")
        if np.issubdtype(t.dtype, np.integer):
            t = t.astype(np.int64).reshape(-1)
        else:
            t = t.astype(np.float64)
            if t.ndim == 1:
                t = t[:, None]
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", t)

    @property
    def is_classification(self) -> bool:
        return self.targets.dtype == np.int64

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, rows) -> "Batch":
        return Batch(self.inputs[rows], self.targets[rows], self.task_id)


def param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...]]]:
    i, h, o = spec.input_dim, spec.hidden_dim, spec.output_dim
    if spec.kind == "linear":
        return [("W", (o, i)), ("b", (o,))]
    if spec.kind == "mlp1":
        return [("W1", (h, i)), ("b1", (h,)), ("W2", (o, h)), ("b2", (o,))]
    return [("U", (h, i)), ("q", (h,)), ("Wk", (h, h)), ("Wv", (h, h)), ("Wo", (o, h)), ("bo", (o,))]


def param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(spec))


def param_slices(spec: ModelSpec) -> dict[str, slice]:
    out, start = {}, 0
    for name, shape in param_layout(spec):
        n = int(np.prod(shape))
        out[name] = slice(start, start + n)
        start += n
    return out


def unpack(spec: ModelSpec, params) -> dict[str, np.ndarray]:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (param_count(spec),):
        raise DimensionError(f"expected {param_count(spec)} parameters, got {params.shape}")
    sl = param_slices(spec)
    return {name: params[sl[name]].reshape(shape) for name, shape in param_layout(spec)}


def pack(spec: ModelSpec, blocks: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(blocks[name], dtype=np.float64).reshape(-1) for name, _ in param_layout(spec)])


# blocks that are biases (zero-initialised); everything else uses fan-in scaling
_BIASES = {"b", "b1", "b2", "bo"}


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, shape in param_layout(spec):
        if name in _BIASES:
            blocks[name] = np.zeros(shape)
            continue
        if name == "U":
            fan_in = 1  # each column embeds a single scalar feature
        elif name == "q":
            fan_in = shape[0]
        else:
            fan_in = shape[-1]
        s = 1.0 / np.sqrt(fan_in)
        blocks[name] = rng.uniform(-s, s, size=shape)
    return pack(spec, blocks)


# -- forward / backward ----------------------------------------------------


def _act(spec, z):
    if spec.activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(spec, z, a):
    if spec.activation == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def _forward(spec: ModelSpec, p: dict, x: np.ndarray):
    """Returns outputs and whatever the backward pass needs."""
    if spec.kind == "linear":
        return x @ p["W"].T + p["b"], None
    if spec.kind == "mlp1":
        z = x @ p["W1"].T + p["b1"]
        a = _act(spec, z)
        return a @ p["W2"].T + p["b2"], (z, a)
    h = spec.hidden_dim
    tok = x[:, :, None] * p["U"].T[None, :, :]  # (B, in, h)
    keys = tok @ p["Wk"].T
    vals = tok @ p["Wv"].T
    scores = keys @ p["q"] / np.sqrt(h)  # (B, in)
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    attn = w / w.sum(axis=1, keepdims=True)
    z = np.einsum("bj,bjh->bh", attn, vals)
    return z @ p["Wo"].T + p["bo"], (tok, keys, vals, attn, z)


def _backward(spec: ModelSpec, p: dict, x: np.ndarray, cache, dy: np.ndarray) -> dict:
    if spec.kind == "linear":
        return {"W": dy.T @ x, "b": dy.sum(axis=0)}
    if spec.kind == "mlp1":
        z, a = cache
        da = dy @ p["W2"]
        dz = da * _act_grad(spec, z, a)
        return {"W1": dz.T @ x, "b1": dz.sum(axis=0), "W2": dy.T @ a, "b2": dy.sum(axis=0)}
    tok, keys, vals, attn, z = cache
    rs = 1.0 / np.sqrt(spec.hidden_dim)
    g = {"Wo": dy.T @ z, "bo": dy.sum(axis=0)}
    dz = dy @ p["Wo"]  # (B, h)
    dvals = attn[:, :, None] * dz[:, None, :]
    dattn = np.einsum("bjh,bh->bj", vals, dz)
    dscores = attn * (dattn - (attn * dattn).sum(axis=1, keepdims=True))
    g["q"] = rs * np.einsum("bj,bjh->h", dscores, keys)
    dkeys = rs * dscores[:, :, None] * p["q"][None, None, :]
    g["Wk"] = np.einsum("bji,bjk->ik", dkeys, tok)
    g["Wv"] = np.einsum("bji,bjk->ik", dvals, tok)
    dtok = dkeys @ p["Wk"] + dvals @ p["Wv"]
    g["U"] = np.einsum("bj,bjh->hj", x, dtok)
    return g


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        coord = tuple(int(c) for c in bad[0])
        raise NumericError(f"non-finite {what} at {coord}", coordinate=coord)


def _loss_and_dy(y: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    n = len(batch)
    if batch.is_classification:
        if batch.targets.min() < 0 or batch.targets.max() >= y.shape[1]:
            raise DimensionError("class label outside the model's output range")
        shifted = y - y.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted[np.arange(n), batch.targets] - logz
        probs = np.exp(shifted - logz[:, None])
        probs[np.arange(n), batch.targets] -= 1.0
        return float(-logp.mean()), probs / n
    if batch.targets.shape[1] != y.shape[1]:
        raise DimensionError(f"targets have {batch.targets.shape[1]} columns, model emits {y.shape[1]}")
    r = y - batch.targets
    return float(np.mean(r * r)), 2.0 * r / r.size


def predict(spec: ModelSpec, params, inputs) -> np.ndarray:
    p = unpack(spec, params)
    y, _ = _forward(spec, p, np.asarray(inputs, dtype=np.float64))
    _check_finite(y, "model output")
    return y


def loss(spec: ModelSpec, params, batch: Batch) -> float:
    """Mean squared error (regression) or mean softmax cross-entropy (labels)."""
    return loss_and_grad(spec, params, batch, need_grad=False)[0]


def grad(spec: ModelSpec, params, batch: Batch) -> np.ndarray:
    return loss_and_grad(spec, params, batch)[1]


def loss_and_grad(spec: ModelSpec, params, batch: Batch, need_grad: bool = True):
    p = unpack(spec, params)
    _check_finite(np.asarray(params), "parameter")
    if batch.inputs.shape[1] != spec.input_dim:
        raise DimensionError(f"batch has {batch.inputs.shape[1]} features, model expects {spec.input_dim}")
    y, cache = _forward(spec, p, batch.inputs)
    _check_finite(y, "model output")
    value, dy = _loss_and_dy(y, batch)
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    if not need_grad:
        return value, None
    g = pack(spec, _backward(spec, p, batch.inputs, cache, dy))
    _check_finite(g, "gradient")
    return value, g


def finite_diff_grad(
    spec: ModelSpec | Callable[[np.ndarray], float],
    params,
    batch: Batch | None = None,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time.

    ``spec`` may also be a plain callable ``f(theta) -> float``, in which case
    ``batch`` is ignored.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    if callable(spec) and not isinstance(spec, ModelSpec):
        f = spec
    else:
        f = lambda th: loss(spec, th, batch)  # noqa: E731
    theta = np.array(params, dtype=np.float64).reshape(-1)
    out = np.empty_like(theta)
    for j in range(theta.size):
        old = theta[j]
        theta[j] = old + h
        fp = f(theta)
        theta[j] = old - h
        fm = f(theta)
        theta[j] = old
        out[j] = (fp - fm) / (2.0 * h)
    return out
