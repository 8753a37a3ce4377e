"""Dense float64 primitives with hand-wired reverse rules.

Tensors are plain numpy ``float64`` arrays in C (row-major) order. The
operations below accept either a single vector or a stack of row vectors
(any leading shape); the reverse rules sum parameter gradients over the
leading axes.

``matvec`` evaluates every row with its own matrix-vector product rather
than one large GEMM. A blocked GEMM may round a row differently depending on
where it sits in the batch, and the pooling layers rely on per-person results
being independent of person order.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DivergenceError

DTYPE = np.float64


def as_tensor(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionError(f"expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def float_array(values) -> np.ndarray:
    """View as a floating array, keeping float64/longdouble and promoting ints."""
    values = np.asarray(values)
    return values.astype(np.result_type(values.dtype, DTYPE), copy=False)


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise DivergenceError(f"non-finite values in {what}")
    return arr


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matvec(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = W x for a matrix (m, n) and x of shape (..., n)."""
    if W.ndim != 2 or x.ndim < 1 or W.shape[1] != x.shape[-1]:
        raise DimensionError(f"matvec: matrix {W.shape} incompatible with vector {x.shape}")
    y = np.matmul(x[..., None, :], W.T)[..., 0, :]
    return check_finite(y, "matvec output")


def matvec_backward(W: np.ndarray, x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (dL/dW, dL/dx) given dL/dy."""
    m, n = W.shape
    dW = dy.reshape(-1, m).T @ x.reshape(-1, n)
    dx = dy @ W
    return dW, dx


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "hadamard")
    return check_finite(a * b, "hadamard output")


def hadamard_backward(a: np.ndarray, b: np.ndarray, dc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return dc * b, dc * a


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape(a, b, "add")
    return check_finite(a + b, "add output")


def add_backward(dc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return dc, dc


def sigmoid(v: np.ndarray) -> np.ndarray:
    # branch on sign so exp never sees a large positive argument
    v = float_array(v)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def tanh_act(v: np.ndarray) -> np.ndarray:
    return np.tanh(float_array(v))


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)
