"""Matrix-free Jacobian spectral-norm estimate and the smoothness penalty.

Power iteration alternates a vector-Jacobian product (``v ∝ uᵀJ``) and a
Jacobian-vector product (``u ∝ Jv``) per sample, then returns ``uᵀJv`` with
``u`` and ``v`` frozen, so only ``J`` (i.e. the network parameters) carries
gradient.  S rounds cost 2S + 1 differentiation passes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, _as_leaf, as_tensor, enable_grad, grad, jvp_forward, maximum, mean, tabs, tsum


class DegenerateJacobianError(FloatingPointError):
    pass


@dataclass
class SpectralEstimate:
    sigma_hat: Tensor  # shape (n,), differentiable w.r.t. the map's parameters
    u: np.ndarray
    v: np.ndarray
    passes: int


def _unit_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    zero = norms[:, 0] == 0.0
    return a / np.where(norms == 0.0, 1.0, norms), zero


def estimate_from_graph(y: Tensor, x: Tensor, steps: int, rng: np.random.Generator) -> SpectralEstimate:
    """Estimate for an already-recorded ``y = F(x)`` where ``x`` is a grad leaf."""
    if steps < 1:
        raise ValueError(f"need at least one power-iteration step, got {steps}")
    if y.ndim != 2 or x.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ValueError(f"expected batched 2-d input/output, got {x.shape} -> {y.shape}")
    passes = 0
    resampled = False
    while True:
        u, _ = _unit_rows(rng.standard_normal(y.shape))
        degenerate = False
        for _ in range(steps):
            v, zero = _unit_rows(grad(y, [x], u)[0].data)
            passes += 1
            if zero.any():
                degenerate = True
                break
            u, zero = _unit_rows(jvp_forward(y, x, v).data)
            passes += 1
            if zero.any():
                degenerate = True
                break
        if not degenerate:
            break
        if resampled:
            raise DegenerateJacobianError("zero Jacobian product after resampling the start vector")
        resampled = True
    passes += 1
    return SpectralEstimate(rayleigh_quotient(y, x, u, v), u, v, passes)


def rayleigh_quotient(y: Tensor, x: Tensor, u, v) -> Tensor:
    """Per-row ``uᵀ J v`` for fixed ``u``, ``v``; differentiable w.r.t. whatever ``y`` depends on."""
    (uj,) = grad(y, [x], as_tensor(u), create_graph=True)
    return tsum(uj * as_tensor(v), axis=1)


def spectral_norm_estimate(func: Callable[[Tensor], Tensor], x, steps: int, seed) -> SpectralEstimate:
    """Per-sample estimate of ``||J_func(x_i)||_2`` by ``steps`` power iterations."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    leaf = _as_leaf(as_tensor(x))
    with enable_grad():
        y = func(leaf)
    return estimate_from_graph(y, leaf, steps, rng)


def smoothness_penalty(estimate, lip_target: float = 1.0, one_sided: bool = False) -> Tensor:
    """Mean |sigma_hat - lip_target| (or its one-sided hinge)."""
    if lip_target <= 0:
        raise ValueError(f"Lipschitz target must be positive, got {lip_target}")
    sigma = estimate.sigma_hat if isinstance(estimate, SpectralEstimate) else as_tensor(estimate)
    gap = sigma - lip_target
    return mean(maximum(gap, 0.0) if one_sided else tabs(gap))
