import math

import numpy as np
import pytest

from structadv import optim
from structadv.networks import Architecture, NetworkParams, init_params


def single(value):
    # optimizer only looks at the tensor dict
    return NetworkParams(None, {"l0.weight": np.array([[value]]), "l0.bias": np.array([0.0])})


def test_first_step_by_hand():
    params = single(1.0)
    state = optim.OptimState.for_params(params, lr=0.1, weight_decay=0.0)
    grads = {"l0.weight": np.array([[0.5]]), "l0.bias": np.array([0.0])}
    new, st = optim.step(params, grads, state)
    # m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    assert new.tensors["l0.weight"][0, 0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-14)
    assert st.step == 1
    assert params.tensors["l0.weight"][0, 0] == 1.0


def test_two_steps_by_hand():
    params = single(2.0)
    state = optim.OptimState.for_params(params, lr=0.01, weight_decay=0.1)
    gs = [1.0, -3.0]
    p, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p - 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8) - 0.01 * 0.1 * p
        params, state = optim.step(params, {"l0.weight": np.array([[g]]), "l0.bias": np.array([0.0])}, state)
    assert params.tensors["l0.weight"][0, 0] == pytest.approx(p, rel=1e-14)


def test_weight_decay_is_decoupled():
    # zero gradient: only the decay term moves the weight
    params = single(3.0)
    state = optim.OptimState.for_params(params, lr=0.1, weight_decay=0.5)
    new, _ = optim.step(params, {"l0.weight": np.zeros((1, 1)), "l0.bias": np.zeros(1)}, state)
    assert new.tensors["l0.weight"][0, 0] == pytest.approx(3.0 - 0.1 * 0.5 * 3.0, rel=1e-14)


def test_non_finite_gradient_names_parameter():
    params = init_params(Architecture(2, (16,), 1, 16), 0)
    state = optim.OptimState.for_params(params)
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    grads["l1.bias"] = np.array([np.nan])
    with pytest.raises(optim.NonFiniteGradientError) as info:
        optim.step(params, grads, state)
    assert info.value.name == "l1.bias"
