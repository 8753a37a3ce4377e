"""Heavy-ball SGD and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, InputError

DEFAULT_LR = 1e-5
DEFAULT_MOMENTUM = 0.9


@dataclass
class OptimState:
    velocity: list[np.ndarray]
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError(f"learning rate must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = DEFAULT_LR,
                   momentum: float = DEFAULT_MOMENTUM) -> "OptimState":
        return cls([np.zeros_like(p) for p in params], lr, momentum)


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], st: OptimState):
    """v <- momentum * v - lr * g ; w <- w + v, in place. Returns (params, velocity)."""
    if not (len(params) == len(grads) == len(st.velocity)):
        raise DimensionError(f"{len(params)} params, {len(grads)} grads, {len(st.velocity)} velocities")
    for w, g, v in zip(params, grads, st.velocity):
        if not (w.shape == g.shape == v.shape):
            raise DimensionError(f"shape mismatch: param {w.shape}, grad {g.shape}, velocity {v.shape}")
    for g in grads:
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient")
    for w, g, v in zip(params, grads, st.velocity):
        v *= st.momentum
        v -= st.lr * g
        w += v
    return params, st.velocity


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    probes: int = 0


def relative_error(analytic, numeric, floor: float = 1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(loss_fn: Callable[[], tuple[float, Sequence[np.ndarray]]], params, probe_count: int | None = None,
               seed=0, step: float = 1e-5, floor: float = 1e-8,
               numeric_fn: Callable[[], float] | None = None, numeric_params=None) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    ``loss_fn()`` evaluates the loss at the current contents of ``params`` and
    returns ``(loss, grads)`` with grads aligned to params. ``params`` is a list
    of arrays or of ``(name, array)`` pairs; entries are perturbed in place and
    restored. ``probe_count`` coordinates are drawn per tensor (all when None).

    With ``numeric_fn`` the differences are taken on that loss-only function
    instead, perturbing ``numeric_params`` (aligned with ``params``). This lets
    the reference run at higher precision than the analytic pass.
    """
    named = [(p if isinstance(p, tuple) else (str(i), p)) for i, p in enumerate(params)]
    if numeric_fn is None:
        numeric_fn = lambda: loss_fn()[0]  # noqa: E731
        probe = [w for _, w in named]
    else:
        probe = [p[1] if isinstance(p, tuple) else p for p in numeric_params]
        if [w.shape for w in probe] != [w.shape for _, w in named]:
            raise DimensionError("numeric_params do not line up with params")
    _, grads = loss_fn()
    grads = [np.array(g, copy=True) for g in grads]
    if len(grads) != len(named):
        raise DimensionError(f"loss_fn returned {len(grads)} gradients for {len(named)} tensors")
    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0)
    for (name, _), w, g in zip(named, probe, grads):
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        if probe_count is None or probe_count >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=probe_count, replace=False)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + step
            up = numeric_fn()
            flat[j] = orig - step
            down = numeric_fn()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise DivergenceError(f"non-finite loss while probing {name}[{j}]")
            numeric = (up - down) / (2 * step)
            worst = max(worst, float(relative_error(gflat[j], numeric, floor)))
        result.per_tensor[name] = worst
        result.probes += len(idx)
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
