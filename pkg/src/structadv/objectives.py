"""Structural adversarial losses on discriminator embeddings.

All statistics use diagonal covariances and population (1/N) variances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat, log, maximum, sqrt, tsum, mean, var
from .specreg import smoothness_penalty

VAR_FLOOR = 1e-6
DISTANCES = ("jsd", "bhattacharyya")


@dataclass
class GaussianStats:
    mu: Tensor
    var: Tensor


def batch_gaussian_stats(Z, floor: float = VAR_FLOOR) -> GaussianStats:
    Z = as_tensor(Z)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ValueError(f"need a batch of at least 2 embeddings, got shape {Z.shape}")
    return GaussianStats(mean(Z, axis=0), maximum(var(Z, axis=0), floor))


def _check_pair(Z_real: Tensor, Z_fake: Tensor) -> None:
    if Z_real.ndim != 2 or Z_fake.ndim != 2 or Z_real.shape[1] != Z_fake.shape[1]:
        raise ValueError(f"embedding widths differ: {Z_real.shape} vs {Z_fake.shape}")


def jsd_gaussian(Z_real, Z_fake, floor: float = VAR_FLOOR) -> Tensor:
    """Closed-form JSD surrogate between diagonal Gaussian fits of two batches.

    The mixture is replaced by a single Gaussian fitted to the pooled rows, so
    ``sum_d log v_joint - (log v_real + log v_fake) / 2``.  Nonnegative when
    the two batches have the same number of rows.
    """
    Z_real, Z_fake = as_tensor(Z_real), as_tensor(Z_fake)
    _check_pair(Z_real, Z_fake)
    real = batch_gaussian_stats(Z_real, floor)
    fake = batch_gaussian_stats(Z_fake, floor)
    joint = batch_gaussian_stats(concat([Z_real, Z_fake], axis=0), floor)
    return tsum(log(joint.var) - 0.5 * log(real.var) - 0.5 * log(fake.var))


def bhattacharyya(Z_real, Z_fake, floor: float = VAR_FLOOR) -> Tensor:
    Z_real, Z_fake = as_tensor(Z_real), as_tensor(Z_fake)
    _check_pair(Z_real, Z_fake)
    real = batch_gaussian_stats(Z_real, floor)
    fake = batch_gaussian_stats(Z_fake, floor)
    pooled = 0.5 * (real.var + fake.var)
    gap = real.mu - fake.mu
    mahalanobis = tsum(gap * gap / pooled)
    log_ratio = tsum(log(pooled) - 0.5 * log(real.var) - 0.5 * log(fake.var))
    return 0.125 * mahalanobis + 0.5 * log_ratio


def distance(name: str, Z_real, Z_fake) -> Tensor:
    if name == "jsd":
        return jsd_gaussian(Z_real, Z_fake)
    if name == "bhattacharyya":
        return bhattacharyya(Z_real, Z_fake)
    raise ValueError(f"unknown distance {name!r}; expected one of {DISTANCES}")


def _neighbor_mean(neighbors, n: int, width: int) -> np.ndarray:
    nb = neighbors.data if isinstance(neighbors, Tensor) else np.asarray(neighbors, dtype=np.float64)
    if nb.ndim != 3 or nb.shape[0] != n or nb.shape[2] != width:
        raise ValueError(f"neighbors must have shape ({n}, K, {width}), got {nb.shape}")
    if nb.shape[1] == 0:
        raise ValueError("K = 0: no neighbors available (bank not warm)")
    return nb.mean(axis=1)


def cluster_terms(z, z_g, neighbors_real, neighbors_fake, fake_norm: str = "nk") -> tuple[Tensor, Tensor]:
    """Mean cosine between each embedding and its K bank neighbors.

    Neighbors are constants.  ``fake_norm="n"`` divides the fake sum by N
    only, i.e. scales the fake term by K.
    """
    z, z_g = as_tensor(z), as_tensor(z_g)
    real_bar = _neighbor_mean(neighbors_real, z.shape[0], z.shape[1])
    fake_bar = _neighbor_mean(neighbors_fake, z_g.shape[0], z_g.shape[1])
    real_term = tsum(z * real_bar) / z.shape[0]
    fake_term = tsum(z_g * fake_bar) / z_g.shape[0]
    if fake_norm == "n":
        fake_term = fake_term * np.shape(neighbors_fake)[1]
    elif fake_norm != "nk":
        raise ValueError(f"fake_norm must be 'nk' or 'n', got {fake_norm!r}")
    return real_term, fake_term


def hinge_norm(z_tilde) -> Tensor:
    """Mean of max(||z̃_i|| - 1, 0)."""
    z_tilde = as_tensor(z_tilde)
    norms = sqrt(tsum(z_tilde * z_tilde, axis=1))
    return mean(maximum(norms - 1.0, 0.0))


@dataclass(frozen=True)
class ObjectiveConfig:
    distance: str = "jsd"
    lambda_c: float = 3.0
    lambda_s: float = 5.0
    lambda_h: float = 4.0
    lip_target: float = 1.0
    fake_norm: str = "nk"
    one_sided: bool = False


@dataclass
class LossBreakdown:
    """Loss parts; ``total`` is the value to minimize for the given role."""

    role: str
    total: Tensor
    gaussian: Tensor
    cluster_real: Tensor | None = None
    cluster_fake: Tensor | None = None
    hinge_norm: Tensor | None = None
    smoothness: Tensor | None = None

    def floats(self) -> dict[str, float]:
        out = {}
        for key in ("total", "gaussian", "cluster_real", "cluster_fake", "hinge_norm", "smoothness"):
            val = getattr(self, key)
            out[key] = float("nan") if val is None else val.item()
        return out


def discriminator_loss(
    z_real,
    z_fake,
    z_tilde_real=None,
    z_tilde_fake=None,
    neighbors_real=None,
    neighbors_fake=None,
    sigma_hat=None,
    config: ObjectiveConfig = ObjectiveConfig(),
) -> LossBreakdown:
    """Discriminator side: push the two Gaussian fits apart, tighten real clusters.

    Terms whose inputs are ``None`` are skipped (e.g. cluster terms while the
    bank is still filling).
    """
    d = distance(config.distance, z_real, z_fake)
    total = -d
    out = LossBreakdown("D", total, d)
    if neighbors_real is not None and neighbors_fake is not None:
        real_term, fake_term = cluster_terms(z_real, z_fake, neighbors_real, neighbors_fake, config.fake_norm)
        out.cluster_real, out.cluster_fake = real_term, fake_term
        total = total - config.lambda_c * real_term + config.lambda_c * fake_term
    if sigma_hat is not None:
        out.smoothness = smoothness_penalty(sigma_hat, config.lip_target, config.one_sided)
        total = total + config.lambda_s * out.smoothness
    tildes = [t for t in (z_tilde_real, z_tilde_fake) if t is not None]
    if tildes:
        out.hinge_norm = hinge_norm(concat(tildes, axis=0) if len(tildes) > 1 else tildes[0])
        total = total + config.lambda_h * out.hinge_norm
    out.total = total
    return out


def generator_loss(z_real, z_fake, neighbors_fake=None, config: ObjectiveConfig = ObjectiveConfig()) -> LossBreakdown:
    d = distance(config.distance, z_real, z_fake)
    out = LossBreakdown("G", d, d)
    if neighbors_fake is not None:
        z_fake = as_tensor(z_fake)
        fake_bar = _neighbor_mean(neighbors_fake, z_fake.shape[0], z_fake.shape[1])
        fake_term = tsum(z_fake * fake_bar) / z_fake.shape[0]
        if config.fake_norm == "n":
            fake_term = fake_term * np.shape(neighbors_fake)[1]
        out.cluster_fake = fake_term
        out.total = d - config.lambda_c * fake_term
    return out


def hinge_gan_losses(scores_real, scores_fake) -> tuple[Tensor, Tensor]:
    """Hinge GAN losses (both to be minimized) from scalar discriminator scores."""
    scores_real, scores_fake = as_tensor(scores_real), as_tensor(scores_fake)
    loss_d = mean(maximum(1.0 - scores_real, 0.0)) + mean(maximum(1.0 + scores_fake, 0.0))
    loss_g = -mean(scores_fake)
    return loss_d, loss_g
