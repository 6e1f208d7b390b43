"""AdamW (decoupled weight decay)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .networks import NetworkParams


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


@dataclass
class OptimState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: NetworkParams, **hyper) -> "OptimState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p) for k, p in params.tensors.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.tensors.items()}
        return state


def step(params: NetworkParams, grads: dict[str, np.ndarray], state: OptimState) -> tuple[NetworkParams, OptimState]:
    """One AdamW update; returns new params and a new state (inputs untouched)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params[name] = p - state.lr * update - state.lr * state.weight_decay * p
        new_m[name], new_v[name] = m, v
    new_state = OptimState(state.lr, b1, b2, state.eps, state.weight_decay, t, new_m, new_v)
    return NetworkParams(params.arch, new_params), new_state
