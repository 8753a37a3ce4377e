"""Feed-forward layers: fully connected, softmax cross-entropy, concat, person pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, EmptySceneError, InputError

ACTIVATIONS = ("linear", "relu", "tanh")
POOL_MODES = ("max", "sum", "average")


def normalize_pool_mode(mode: str) -> str:
    if mode == "avg":
        return "average"
    if mode not in POOL_MODES:
        raise InputError(f"unknown pool mode {mode!r}; expected one of {POOL_MODES}")
    return mode


@dataclass
class FcParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"FcParams: W {self.W.shape} and b {self.b.shape} disagree")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [("W", self.W), ("b", self.b)]

    def zeros_like(self) -> "FcParams":
        return FcParams(np.zeros_like(self.W), np.zeros_like(self.b), self.activation)

    def copy(self) -> "FcParams":
        return FcParams(self.W.copy(), self.b.copy(), self.activation)


def fc_init(n_in: int, n_out: int, rng: np.random.Generator, activation: str = "linear",
            zero: bool = False) -> FcParams:
    if n_in < 1 or n_out < 1:
        raise InputError(f"fc layer dims must be positive, got {n_in}->{n_out}")
    if zero:
        W = np.zeros((n_out, n_in))
    else:
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
    return FcParams(W, np.zeros(n_out), activation)


def fc_forward(p: FcParams, x: np.ndarray):
    """Return (act(W x + b), cache). x may carry leading batch axes."""
    pre = T.matvec(p.W, x) + p.b
    if p.activation == "relu":
        y = np.maximum(pre, 0.0)
    elif p.activation == "tanh":
        y = T.tanh_act(pre)
    else:
        y = pre
    return y, (x, pre, y)


def fc_backward(p: FcParams, cache, dy: np.ndarray):
    """Return (FcParams of gradients, dL/dx)."""
    x, pre, y = cache
    if p.activation == "relu":
        dpre = dy * (pre > 0)
    elif p.activation == "tanh":
        dpre = T.tanh_backward(y, dy)
    else:
        dpre = dy
    dW, dx = T.matvec_backward(p.W, x, dpre)
    db = dpre.reshape(-1, p.n_out).sum(axis=0)
    return FcParams(dW, db, p.activation), dx


def softmax_xent(logits: np.ndarray, labels):
    """Per-row cross-entropy and softmax probabilities.

    ``logits`` has shape (..., C) and ``labels`` the matching leading shape.
    """
    logits = T.float_array(logits)
    labels = np.asarray(labels)
    C = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise InputError(f"label out of range [0, {C})")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=-1)
    probs = e / total[..., None]
    picked = np.take_along_axis(shifted, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    loss = np.log(total) - picked
    return loss, probs


def softmax_xent_backward(probs: np.ndarray, labels) -> np.ndarray:
    grad = probs.copy()
    labels = np.asarray(labels, dtype=np.intp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
    return grad


def concat(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    if x.shape[:-1] != h.shape[:-1]:
        raise DimensionError(f"concat: leading shapes differ {x.shape} vs {h.shape}")
    return np.concatenate([x, h], axis=-1)


def concat_backward(g: np.ndarray, split: int) -> tuple[np.ndarray, np.ndarray]:
    return g[..., :split], g[..., split:]


def pool_segments(features: np.ndarray, offsets, mode: str):
    """Pool rows ``features[offsets[i]:offsets[i+1]]`` into one row per segment.

    Sum and average add the values in sorted order, so the result is bitwise
    independent of the order of rows within a segment. Max routes gradient to
    the first (lowest index) row attaining the maximum.
    """
    mode = normalize_pool_mode(mode)
    offsets = np.asarray(offsets, dtype=np.intp)
    counts = np.diff(offsets)
    if len(counts) == 0 or (counts <= 0).any():
        raise EmptySceneError("pooling over an empty set of persons")
    out = np.empty((len(counts),) + features.shape[1:], dtype=features.dtype)
    argmax = None
    if mode == "max":
        argmax = np.empty(out.shape, dtype=np.intp)
        for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
            seg = features[a:b]
            idx = seg.argmax(axis=0)
            out[i] = np.take_along_axis(seg, idx[None], axis=0)[0]
            argmax[i] = idx + a
    else:
        for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
            out[i] = np.sort(features[a:b], axis=0).sum(axis=0)
            if mode == "average":
                out[i] /= b - a
    return out, (mode, offsets, features.shape, argmax)


def pool_segments_backward(cache, dz: np.ndarray) -> np.ndarray:
    mode, offsets, shape, argmax = cache
    dF = np.zeros(shape, dtype=dz.dtype)
    counts = np.diff(offsets)
    if mode == "max":
        for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
            seg = dF[a:b]
            np.put_along_axis(seg, (argmax[i] - a)[None], dz[i][None], axis=0)
    else:
        for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
            dF[a:b] = dz[i] / counts[i] if mode == "average" else dz[i]
    return dF


def pool_persons(features, mode: str = "max"):
    """Pool K person vectors (or a (K, ...) array) into one; returns (z, cache)."""
    if isinstance(features, np.ndarray):
        arr = features
    else:
        features = [T.float_array(f) for f in features]
        if not features:
            raise EmptySceneError("pooling over an empty set of persons")
        if len({f.shape for f in features}) != 1:
            raise DimensionError(f"ragged person features: {sorted({f.shape for f in features})}")
        arr = np.stack(features)
    if arr.shape[0] == 0:
        raise EmptySceneError("pooling over an empty set of persons")
    z, cache = pool_segments(arr, [0, arr.shape[0]], mode)
    return z[0], cache


def pool_persons_backward(cache, dz: np.ndarray) -> np.ndarray:
    return pool_segments_backward(cache, dz[None])
