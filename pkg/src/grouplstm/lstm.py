"""LSTM cell, sequence unrolling and backpropagation through time.

Gate equations per timestep::

    i = sigmoid(W_xi x + W_hi h_prev + b_i)
    f = sigmoid(W_xf x + W_hf h_prev + b_f)
    o = sigmoid(W_xo x + W_ho h_prev + b_o)
    g = tanh(W_xc x + W_hc h_prev + b_c)
    c = f * c_prev + i * g
    h = o * tanh(c)

Sequences are time-major: ``xs`` has shape (T, D) or (T, B, D) for B
independent sequences sharing the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError

GATES = ("i", "f", "o", "c")
# serialization order: input weights, recurrent weights, bias, gate by gate
PARAM_ORDER = tuple(name for g in GATES for name in (f"W_x{g}", f"W_h{g}", f"b_{g}"))


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_hi: np.ndarray
    b_i: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    b_f: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    b_o: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        N, D = self.W_xi.shape
        for g in GATES:
            if getattr(self, f"W_x{g}").shape != (N, D):
                raise DimensionError(f"W_x{g} must be {(N, D)}")
            if getattr(self, f"W_h{g}").shape != (N, N):
                raise DimensionError(f"W_h{g} must be {(N, N)}")
            if getattr(self, f"b_{g}").shape != (N,):
                raise DimensionError(f"b_{g} must be {(N,)}")

    @property
    def input_dim(self) -> int:
        return self.W_xi.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_xi.shape[0]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_ORDER]

    def zeros_like(self) -> "LstmParams":
        return LstmParams(**{f.name: np.zeros_like(getattr(self, f.name)) for f in fields(self)})

    def copy(self) -> "LstmParams":
        return LstmParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, batch: tuple[int, ...] = (), dtype=T.DTYPE) -> "LstmState":
        shape = tuple(batch) + (hidden_dim,)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))


@dataclass
class StepRecord:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class TapeCache:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_state(self) -> LstmState:
        last = self.records[-1]
        return LstmState(last.h, last.c)


def lstm_init(input_dim: int, hidden_dim: int, seed=None, forget_bias: float = 0.0) -> LstmParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    ``seed`` may be an int or a ``numpy.random.Generator``. ``forget_bias``
    sets b_f; the default 0 leaves the forget gate half open.
    """
    if input_dim < 1 or hidden_dim < 1:
        raise InputError(f"LSTM dims must be positive, got D={input_dim}, N={hidden_dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bx = 1.0 / np.sqrt(input_dim)
    bh = 1.0 / np.sqrt(hidden_dim)
    kw = {}
    for g in GATES:
        kw[f"W_x{g}"] = rng.uniform(-bx, bx, size=(hidden_dim, input_dim))
        kw[f"W_h{g}"] = rng.uniform(-bh, bh, size=(hidden_dim, hidden_dim))
        kw[f"b_{g}"] = np.zeros(hidden_dim)
    kw["b_f"] = np.full(hidden_dim, float(forget_bias))
    return LstmParams(**kw)


def _gate(p: LstmParams, g: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    return T.add(T.add(T.matvec(getattr(p, f"W_x{g}"), x), T.matvec(getattr(p, f"W_h{g}"), h)),
                 np.broadcast_to(getattr(p, f"b_{g}"), h.shape))


def lstm_step(p: LstmParams, x_t: np.ndarray, prev: LstmState) -> tuple[LstmState, StepRecord]:
    if x_t.shape[-1] != p.input_dim:
        raise DimensionError(f"input width {x_t.shape[-1]} != LSTM input dim {p.input_dim}")
    if prev.h.shape != x_t.shape[:-1] + (p.hidden_dim,) or prev.c.shape != prev.h.shape:
        raise DimensionError(f"state shapes {prev.h.shape}/{prev.c.shape} do not fit input {x_t.shape}")
    i = T.sigmoid(_gate(p, "i", x_t, prev.h))
    f = T.sigmoid(_gate(p, "f", x_t, prev.h))
    o = T.sigmoid(_gate(p, "o", x_t, prev.h))
    g = T.tanh_act(_gate(p, "c", x_t, prev.h))
    c = T.add(T.hadamard(f, prev.c), T.hadamard(i, g))
    tanh_c = T.tanh_act(c)
    h = T.hadamard(o, tanh_c)
    return LstmState(h, c), StepRecord(x_t, prev.h, prev.c, i, f, o, g, c, tanh_c, h)


def lstm_forward(p: LstmParams, xs, init: LstmState | None = None) -> tuple[np.ndarray, TapeCache]:
    """Unroll over time; returns (hs of shape (T, ..., N), tape)."""
    xs = T.float_array(xs)
    if xs.ndim < 2 or xs.shape[0] == 0:
        raise InputError("lstm_forward needs a non-empty sequence")
    state = init if init is not None else LstmState.zeros(p.hidden_dim, xs.shape[1:-1], xs.dtype)
    tape = TapeCache()
    hs = np.empty(xs.shape[:-1] + (p.hidden_dim,), dtype=np.result_type(xs, p.W_xi))
    for t in range(xs.shape[0]):
        state, rec = lstm_step(p, xs[t], state)
        tape.records.append(rec)
        hs[t] = state.h
    return hs, tape


def lstm_backward(p: LstmParams, tape: TapeCache, dhs) -> tuple[LstmParams, np.ndarray]:
    """Exact BPTT. ``dhs[t]`` is dL/dh_t from outside the recurrence.

    Returns (parameter gradients, dL/dxs) with dxs shaped like the inputs.
    """
    dhs = T.float_array(dhs)
    if len(dhs) != len(tape):
        raise InputError(f"got {len(dhs)} output gradients for a tape of length {len(tape)}")
    grads = p.zeros_like()
    N, D = p.hidden_dim, p.input_dim
    dxs = np.empty(dhs.shape[:-1] + (D,))
    dh_next = np.zeros(dhs.shape[1:])
    dc_next = np.zeros(dhs.shape[1:])
    for t in range(len(tape) - 1, -1, -1):
        r = tape.records[t]
        dh = dhs[t] + dh_next
        do, dtanh_c = T.hadamard_backward(r.o, r.tanh_c, dh)
        # the additive cell path carries dc_next straight through
        dc = dc_next + T.tanh_backward(r.tanh_c, dtanh_c)
        df, dc_prev = T.hadamard_backward(r.f, r.c_prev, dc)
        di, dg = T.hadamard_backward(r.i, r.g, dc)
        dpre = {
            "i": T.sigmoid_backward(r.i, di),
            "f": T.sigmoid_backward(r.f, df),
            "o": T.sigmoid_backward(r.o, do),
            "c": T.tanh_backward(r.g, dg),
        }
        dx = np.zeros(r.x.shape)
        dh_prev = np.zeros(r.h_prev.shape)
        for g, dz in dpre.items():
            dWx, dxg = T.matvec_backward(getattr(p, f"W_x{g}"), r.x, dz)
            dWh, dhg = T.matvec_backward(getattr(p, f"W_h{g}"), r.h_prev, dz)
            getattr(grads, f"W_x{g}")[...] += dWx
            getattr(grads, f"W_h{g}")[...] += dWh
            getattr(grads, f"b_{g}")[...] += dz.reshape(-1, N).sum(axis=0)
            dx += dxg
            dh_prev += dhg
        dxs[t] = dx
        dh_next, dc_next = dh_prev, dc_prev
    return grads, dxs
