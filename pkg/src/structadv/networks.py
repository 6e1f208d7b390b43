"""MLP discriminator / generator and their EMA shadows."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor, as_tensor, elu, group_norm, l2_normalize, matmul, add

DEGENERATE_NORM = 1e-12


class DegenerateEmbeddingError(FloatingPointError):
    """An embedding row collapsed to (near) zero norm before normalization."""


@dataclass(frozen=True)
class Architecture:
    """Layer widths for an MLP.

    Hidden layers after the first carry group norm; the first hidden layer
    goes straight into the activation.
    """

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    group_size: int = 16
    activation: str = "elu"

    def __post_init__(self):
        widths = (self.in_dim, *self.hidden, self.out_dim)
        if any(int(w) <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if not self.hidden:
            raise ValueError("at least one hidden layer is required")
        if self.group_size <= 0:
            raise ValueError("group_size must be positive")
        for w in self.hidden[1:]:
            if w % self.group_size:
                raise ValueError(f"hidden width {w} is not a multiple of group size {self.group_size}")
        if self.activation != "elu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.in_dim, *self.hidden, self.out_dim)

    @property
    def n_linear(self) -> int:
        return len(self.hidden) + 1


def discriminator_arch(in_dim=2, hidden=(256, 256, 256, 256), embed_dim=32, group_size=16) -> Architecture:
    return Architecture(in_dim, tuple(hidden), embed_dim, group_size)


def generator_arch(prior_dim=32, hidden=(256, 256, 256, 256), data_dim=2, group_size=16) -> Architecture:
    return Architecture(prior_dim, tuple(hidden), data_dim, group_size)


@dataclass
class NetworkParams:
    """Named parameter arrays in a fixed order, tied to an architecture."""

    arch: Architecture
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh gradient-tracking leaves for one forward/backward round."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.tensors.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.tensors.items()}

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        return _param_shapes(self.arch)

    def validate(self) -> None:
        expected = self.expected_shapes()
        if list(expected) != list(self.tensors):
            raise ValueError(f"parameter names {list(self.tensors)} do not match architecture {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")


def _param_shapes(arch: Architecture) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    widths = arch.widths
    for i in range(arch.n_linear):
        shapes[f"l{i}.weight"] = (widths[i], widths[i + 1])
        shapes[f"l{i}.bias"] = (widths[i + 1],)
        if 1 <= i < arch.n_linear - 1:
            shapes[f"l{i}.gn_weight"] = (widths[i + 1],)
            shapes[f"l{i}.gn_bias"] = (widths[i + 1],)
    return shapes


def init_params(arch: Architecture, seed: int) -> NetworkParams:
    """Weights uniform in ±sqrt(1/fan_in); biases zero; norm gains one."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(arch).items():
        if name.endswith(".weight"):
            bound = np.sqrt(1.0 / shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gn_weight"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetworkParams(arch, tensors)


def mlp_forward(arch: Architecture, params: Mapping[str, Tensor], x) -> tuple[Tensor, Tensor]:
    """Run the MLP; returns (output, penultimate activation)."""
    h = as_tensor(x)
    if h.ndim != 2 or h.shape[1] != arch.in_dim:
        raise ValueError(f"expected input of shape (n, {arch.in_dim}), got {h.shape}")
    last = arch.n_linear - 1
    for i in range(last):
        h = add(matmul(h, params[f"l{i}.weight"]), params[f"l{i}.bias"])
        if i >= 1:
            h = group_norm(h, arch.group_size, params[f"l{i}.gn_weight"], params[f"l{i}.gn_bias"])
        h = elu(h)
    out = add(matmul(h, params[f"l{last}.weight"]), params[f"l{last}.bias"])
    return out, h


@dataclass
class DiscriminatorOutput:
    z_tilde: Tensor
    z: Tensor
    z_b: Tensor


def _check_norms(z_tilde: Tensor) -> None:
    norms = np.sqrt((z_tilde.data ** 2).sum(axis=1))
    bad = np.flatnonzero(norms <= DEGENERATE_NORM)
    if bad.size:
        raise DegenerateEmbeddingError(f"{bad.size} embedding rows have norm <= {DEGENERATE_NORM} (first: row {bad[0]})")


def discriminator_forward(params: NetworkParams | Mapping[str, Tensor], x, arch: Architecture | None = None) -> DiscriminatorOutput:
    if isinstance(params, NetworkParams):
        arch = params.arch
        params = params.constants()
    z_tilde, z_b = mlp_forward(arch, params, x)
    _check_norms(z_tilde)
    return DiscriminatorOutput(z_tilde, l2_normalize(z_tilde), z_b)


def discriminator_score(params: NetworkParams | Mapping[str, Tensor], x, arch: Architecture | None = None) -> Tensor:
    """Scalar-head discriminator for the hinge baseline; shape (n,)."""
    if isinstance(params, NetworkParams):
        arch = params.arch
        params = params.constants()
    if arch.out_dim != 1:
        raise ValueError("score head needs out_dim == 1")
    out, _ = mlp_forward(arch, params, x)
    return out.reshape(-1)


def generator_forward(params: NetworkParams | Mapping[str, Tensor], v, arch: Architecture | None = None) -> Tensor:
    if isinstance(params, NetworkParams):
        arch = params.arch
        params = params.constants()
    out, _ = mlp_forward(arch, params, v)
    return out


def ema_update(shadow: NetworkParams, live: NetworkParams, decay: float) -> NetworkParams:
    """Return ``decay * shadow + (1 - decay) * live``."""
    if not 0.0 <= decay < 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1), got {decay}")
    if list(shadow.tensors) != list(live.tensors):
        raise ValueError("shadow and live parameter names differ")
    out = {}
    for name, s in shadow.tensors.items():
        l = live.tensors[name]
        if s.shape != l.shape:
            raise ValueError(f"{name}: shadow shape {s.shape} != live shape {l.shape}")
        out[name] = decay * s + (1.0 - decay) * l
    return NetworkParams(shadow.arch, out)
