"""Evaluation of a trained state: representation metrics and generation diagnostics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import no_grad
from .data import distance_to_arms, sample_prior
from .evaluation import kmeans_protocol, linear_probe, nmi, purity
from .networks import discriminator_forward, generator_forward, mlp_forward
from .specreg import spectral_norm_estimate
from .train import TrainState, make_splits

EVAL_COLUMNS = ("split", "kmeans_acc_mean", "kmeans_acc_sd", "nmi", "purity", "probe_acc", "arm0_share", "manifold_rate")


@dataclass
class EvalRecord:
    split: str
    kmeans_acc_mean: float
    kmeans_acc_sd: float
    nmi: float
    purity: float
    probe_acc: float
    arm0_share: float
    manifold_rate: float

    def csv_row(self) -> str:
        vals = asdict(self)
        return ",".join([self.split] + [repr(float(vals[c])) for c in EVAL_COLUMNS[1:]])


def backbone_features(state: TrainState, points: np.ndarray) -> np.ndarray:
    """Backbone (penultimate) activations of the EMA discriminator."""
    with no_grad():
        _, z_b = mlp_forward(state.d_ema.arch, state.d_ema.constants(), points)
    return z_b.data


def embeddings(state: TrainState, points: np.ndarray) -> np.ndarray:
    with no_grad():
        return discriminator_forward(state.d_ema, points).z.data


def generate(state: TrainState, n: int, seed: int) -> np.ndarray:
    with no_grad():
        v = sample_prior(n, state.config.prior_dim, seed)
        return generator_forward(state.g_ema, v).data


def jacobian_norms(state: TrainState, points: np.ndarray, steps: int = 20, chunk: int = 500) -> np.ndarray:
    """Per-point spectral-norm estimate of the EMA discriminator's output Jacobian."""
    arch, params = state.d_ema.arch, state.d_ema.constants()
    rng = np.random.default_rng(state.config.eval_seed)
    out = []
    for start in range(0, len(points), chunk):
        est = spectral_norm_estimate(lambda x: mlp_forward(arch, params, x)[0], points[start:start + chunk], steps, rng)
        out.append(est.sigma_hat.data)
    return np.concatenate(out)


def generation_diagnostics(state: TrainState, reference, n: int = 2000, seed: int | None = None) -> tuple[float, float]:
    """(share of samples attributed to arm 0, share within 3 noise_sd of an arm).

    Arm attribution uses the label of the nearest reference point.
    """
    cfg = state.config
    seed = cfg.eval_seed if seed is None else seed
    fake = generate(state, n, seed)
    d2 = (fake ** 2).sum(1)[:, None] - 2 * fake @ reference.points.T + (reference.points ** 2).sum(1)[None, :]
    arm = reference.labels[d2.argmin(axis=1)]
    raw = fake * reference.scale + reference.shift
    near = distance_to_arms(raw).min(axis=1) <= 3 * cfg.noise_sd
    return float(np.mean(arm == 0)), float(np.mean(near))


def evaluate(state: TrainState, split: str = "val", repeats: int = 20) -> EvalRecord:
    cfg = state.config
    train, val = make_splits(cfg)
    if split not in ("train", "val"):
        raise ValueError(f"unknown split {split!r}")
    data = val if split == "val" else train
    feats = backbone_features(state, data.points)
    km = kmeans_protocol(feats, data.labels, 2, repeats=repeats, seed=cfg.eval_seed)
    pred = km.best.assignments
    probe = linear_probe(backbone_features(state, train.points), train.labels, feats, data.labels)
    arm0, manifold = generation_diagnostics(state, data)
    return EvalRecord(split, km.mean, km.sd, nmi(pred, data.labels), purity(pred, data.labels), probe, arm0, manifold)
