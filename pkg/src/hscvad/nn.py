"""Dense numeric primitives: two-layer perceptron, l2 normalization, AdaGrad.

Everything works on float64 numpy arrays. Forward functions accept a single
vector ``(D,)`` or a row batch ``(B, D)`` and return outputs of matching rank.
Backward functions take the cache produced by the matching forward call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError

NORM_FLOOR = 1e-12

_PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(eq=False)
class Mlp2Params:
    """Weights of ``y = W2 relu(W1 x + b1) + b2``.

    ``version`` is bumped by every in-place update so that forward caches
    taken before an optimizer step can be rejected.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        h, din = self.W1.shape
        dout, h2 = self.W2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (dout,):
            raise ShapeError(
                f"inconsistent MLP shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def din(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def dout(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def copy(self) -> "Mlp2Params":
        return Mlp2Params(*(a.copy() for a in self.arrays().values()), activation=self.activation)

    def zeros_like(self) -> "Mlp2Params":
        return Mlp2Params(*(np.zeros_like(a) for a in self.arrays().values()), activation=self.activation)

    def equals(self, other: "Mlp2Params") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays().values(), other.arrays().values()))


def default_hidden(din: int, dout: int) -> int:
    return math.ceil((din + dout) / 2)


def init_mlp2(din: int, dout: int, rng: np.random.Generator, hidden: int | None = None) -> Mlp2Params:
    """Glorot-uniform weights, zero biases."""
    if hidden is None:
        hidden = default_hidden(din, dout)
    if min(din, dout, hidden) <= 0:
        raise ShapeError("MLP dimensions must be positive")

    def glorot(fan_out, fan_in):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    W1 = glorot(hidden, din)
    W2 = glorot(dout, hidden)
    return Mlp2Params(W1, np.zeros(hidden), W2, np.zeros(dout))


@dataclass
class MlpCache:
    params: Mlp2Params
    version: int
    x: np.ndarray  # always 2-D
    pre: np.ndarray
    hidden: np.ndarray
    squeeze: bool


def mlp2_apply(params: Mlp2Params, x) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.ndim != 2 or x2.shape[1] != params.din:
        raise ShapeError(f"expected input dim {params.din}, got shape {x.shape}")
    pre = x2 @ params.W1.T + params.b1
    hid = np.maximum(pre, 0.0)
    y = hid @ params.W2.T + params.b2
    cache = MlpCache(params, params.version, x2, pre, hid, squeeze)
    return (y[0] if squeeze else y), cache


def mlp2_backward(params: Mlp2Params, cache: MlpCache, dy) -> tuple[np.ndarray, Mlp2Params]:
    """Gradients of ``<dy, y>`` w.r.t. the input and every parameter.

    For batched input the parameter gradients are summed over rows.
    """
    if cache.params is not params or cache.version != params.version:
        raise UsageError("cache does not belong to this parameter state (stale forward pass?)")
    dy2 = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    if dy2.shape != (cache.x.shape[0], params.dout):
        raise ShapeError(f"cotangent shape {np.shape(dy)} does not match output")
    dW2 = dy2.T @ cache.hidden
    db2 = dy2.sum(axis=0)
    dpre = (dy2 @ params.W2) * (cache.pre > 0.0)
    dW1 = dpre.T @ cache.x
    db1 = dpre.sum(axis=0)
    dx = dpre @ params.W1
    grads = Mlp2Params(dW1, db1, dW2, db2, activation=params.activation)
    return (dx[0] if cache.squeeze else dx), grads


@dataclass
class NormCache:
    y: np.ndarray
    norm: np.ndarray
    squeeze: bool


def l2_normalize(x, norm_floor: float = NORM_FLOOR) -> tuple[np.ndarray, NormCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x)
    norm = np.linalg.norm(x2, axis=1, keepdims=True)
    if np.any(norm <= norm_floor):
        raise DegenerateInputError("cannot normalize a (near-)zero vector")
    y = x2 / norm
    return (y[0] if squeeze else y), NormCache(y, norm, squeeze)


def l2_normalize_backward(cache: NormCache, dy) -> np.ndarray:
    dy2 = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    if dy2.shape != cache.y.shape:
        raise ShapeError("cotangent shape does not match normalized output")
    proj = np.sum(dy2 * cache.y, axis=1, keepdims=True)
    dx = (dy2 - cache.y * proj) / cache.norm
    return dx[0] if cache.squeeze else dx


def cosine_similarity(a, b, norm_floor: float = NORM_FLOOR) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= norm_floor or nb <= norm_floor:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(z - m), axis=axis))


def _as_arrays(obj) -> Mapping[str, np.ndarray]:
    if isinstance(obj, Mlp2Params):
        return obj.arrays()
    return obj


@dataclass
class AdaGradState:
    """Per-parameter running sums of squared gradients."""

    accum: dict[str, np.ndarray]
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, eps: float = 1e-8) -> "AdaGradState":
        return cls({k: np.zeros_like(v) for k, v in _as_arrays(params).items()}, eps)


def adagrad_step(params, grads, state: AdaGradState, lr: float):
    """In-place AdaGrad update; returns ``(params, state)`` for chaining.

    ``params`` and ``grads`` are either both ``Mlp2Params`` or both mappings
    from parameter name to array.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    p_arrays = _as_arrays(params)
    g_arrays = _as_arrays(grads)
    if set(p_arrays) != set(g_arrays) or set(p_arrays) != set(state.accum):
        raise ShapeError("parameter, gradient and optimizer-state names disagree")
    for name, p in p_arrays.items():
        g = g_arrays[name]
        acc = state.accum[name]
        if g.shape != p.shape or acc.shape != p.shape:
            raise ShapeError(f"shape mismatch for {name}")
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + state.eps)
    if isinstance(params, Mlp2Params):
        params.version += 1
    return params, state
