"""Alternating discriminator / generator training on the double spirals."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, optim
from .autodiff import _as_leaf, enable_grad, grad, no_grad
from .bank import MemoryBank
from .config import TrainConfig
from .data import LabeledPoints, sample_prior, sample_spirals
from .networks import NetworkParams, discriminator_forward, ema_update, init_params, mlp_forward
from .objectives import discriminator_loss, generator_loss, hinge_gan_losses
from .specreg import estimate_from_graph, smoothness_penalty

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "step", "loss_d_total", "loss_g_total", "gaussian", "cluster_real", "cluster_fake",
    "hinge_norm", "sigma_hat_mean", "sigma_hat_max", "bank_fill",
)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite {term} at step {step}")
        self.term = term
        self.step = step


@dataclass
class TrainState:
    config: TrainConfig
    step: int
    d: NetworkParams
    g: NetworkParams
    d_ema: NetworkParams
    g_ema: NetworkParams
    opt_d: optim.OptimState
    opt_g: optim.OptimState
    bank: MemoryBank


def make_splits(config: TrainConfig) -> tuple[LabeledPoints, LabeledPoints]:
    train = sample_spirals(config.n_train, config.noise_sd, config.data_seed)
    val = sample_spirals(config.n_val, config.noise_sd, config.data_seed + 1000, transform=(train.shift, train.scale))
    return train, val


def init_state(config: TrainConfig) -> TrainState:
    d = init_params(config.d_arch(), config.model_seed)
    g = init_params(config.g_arch(), config.model_seed + 1)
    bank = MemoryBank(config.bank_capacity, config.hidden_width, config.embed_dim)
    return TrainState(
        config, 0, d, g, d.copy(), g.copy(),
        optim.OptimState.for_params(d, lr=config.lr, weight_decay=config.weight_decay_d),
        optim.OptimState.for_params(g, lr=config.lr, weight_decay=config.weight_decay_g),
        bank,
    )


# ---------------------------------------------------------------------------
# one training step

def _check(values: dict[str, float], step: int) -> None:
    for term, val in values.items():
        if not math.isnan(val) and not math.isfinite(val):
            raise NonFiniteLossError(term, step)
        if math.isnan(val) and term in ("total", "gaussian"):
            raise NonFiniteLossError(term, step)


def _neighbors(state: TrainState, x_real, ids, x_fake):
    """Bank neighbors for real and fake queries keyed by EMA backbone features."""
    cfg = state.config
    bank = state.bank
    if bank.count < cfg.knn_k + cfg.batch_size:
        return None, None
    with no_grad():
        keys_real = discriminator_forward(state.d_ema, x_real).z_b.data
        keys_fake = discriminator_forward(state.d_ema, x_fake).z_b.data
    real = bank.knn(keys_real, ids, cfg.knn_k)
    fake = bank.knn(keys_fake, np.full(len(x_fake), -1), cfg.knn_k)
    return real, fake


def _d_update(state: TrainState, x_real, ids, x_fake, rng) -> dict[str, float]:
    cfg = state.config
    obj = cfg.objective()
    arch = state.d.arch
    theta = state.d.leaves()
    x_leaf = _as_leaf(x_real)
    nb_real = nb_fake = None
    if cfg.distance != "hinge" and cfg.lambda_c > 0:
        nb_real, nb_fake = _neighbors(state, x_real, ids, x_fake)
    with enable_grad():
        if cfg.distance == "hinge":
            out_real, _ = mlp_forward(arch, theta, x_leaf)
            out_fake, _ = mlp_forward(arch, theta, x_fake)
            est = estimate_from_graph(out_real, x_leaf, cfg.power_steps, rng)
            loss_d, _ = hinge_gan_losses(out_real.reshape(-1), out_fake.reshape(-1))
            smooth = smoothness_penalty(est, cfg.lip_target, cfg.one_sided_penalty)
            total = loss_d + cfg.lambda_s * smooth if cfg.lambda_s > 0 else loss_d
            parts = {"total": total.item(), "gaussian": loss_d.item(), "cluster_real": math.nan,
                     "cluster_fake": math.nan, "hinge_norm": math.nan}
        else:
            real = discriminator_forward(theta, x_leaf, arch)
            fake = discriminator_forward(theta, x_fake, arch)
            est = estimate_from_graph(real.z_tilde, x_leaf, cfg.power_steps, rng)
            breakdown = discriminator_loss(
                real.z, fake.z, real.z_tilde, fake.z_tilde, nb_real, nb_fake,
                est.sigma_hat if cfg.lambda_s > 0 else None, obj,
            )
            total = breakdown.total
            parts = breakdown.floats()
    _check(parts, state.step)
    names = list(theta)
    grads = grad(total, [theta[n] for n in names])
    state.d, state.opt_d = optim.step(state.d, {n: g.data for n, g in zip(names, grads)}, state.opt_d)
    sigma = est.sigma_hat.data
    parts["sigma_hat_mean"] = float(sigma.mean())
    parts["sigma_hat_max"] = float(sigma.max())
    parts["_nb_fake"] = nb_fake
    return parts


def _g_update(state: TrainState, x_real, v, nb_fake) -> float:
    cfg = state.config
    obj = cfg.objective()
    phi = state.g.leaves()
    d_const = state.d.constants()
    with enable_grad():
        x_fake, _ = mlp_forward(state.g.arch, phi, v)
        if cfg.distance == "hinge":
            scores_fake, _ = mlp_forward(state.d.arch, d_const, x_fake)
            total = -scores_fake.mean()
        else:
            fake = discriminator_forward(d_const, x_fake, state.d.arch)
            with no_grad():
                real = discriminator_forward(state.d, x_real)
            total = generator_loss(real.z, fake.z, nb_fake, obj).total
    value = total.item()
    if not math.isfinite(value):
        raise NonFiniteLossError("loss_g_total", state.step)
    names = list(phi)
    grads = grad(total, [phi[n] for n in names])
    state.g, state.opt_g = optim.step(state.g, {n: g.data for n, g in zip(names, grads)}, state.opt_g)
    return value


def train_step(state: TrainState, train: LabeledPoints) -> dict[str, float]:
    """Advance ``state`` by one step in place; returns the logged values."""
    cfg = state.config
    rng = np.random.default_rng([cfg.train_seed, state.step])
    for _ in range(cfg.n_dis):
        ids = rng.choice(len(train), size=cfg.batch_size, replace=False)
        x_real = train.points[ids]
        v = sample_prior(cfg.batch_size, cfg.prior_dim, rng)
        with no_grad():
            x_fake = mlp_forward(state.g.arch, state.g.constants(), v)[0].data
        parts = _d_update(state, x_real, ids, x_fake, rng)
    parts["loss_g_total"] = _g_update(state, x_real, v, parts.pop("_nb_fake"))
    state.d_ema = ema_update(state.d_ema, state.d, cfg.ema_decay)
    state.g_ema = ema_update(state.g_ema, state.g, cfg.ema_decay)
    if cfg.distance != "hinge":
        with no_grad():
            out = discriminator_forward(state.d_ema, x_real)
        state.bank.push(out.z_b.data, out.z.data, ids)
    state.step += 1
    parts["bank_fill"] = state.bank.fill
    return parts


# ---------------------------------------------------------------------------
# persistence

def _params_tensors(prefix: str, params: NetworkParams) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in params.tensors.items()}


def _opt_tensors(prefix: str, st: optim.OptimState) -> dict[str, np.ndarray]:
    out = {f"{prefix}/step": np.array(float(st.step))}
    out.update({f"{prefix}/m/{k}": v for k, v in st.m.items()})
    out.update({f"{prefix}/v/{k}": v for k, v in st.v.items()})
    return out


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    tensors = {"meta/step": np.array(float(state.step)), "meta/bank_pushed": np.array(float(state.bank.pushed))}
    for prefix, params in (("d", state.d), ("d_ema", state.d_ema), ("g", state.g), ("g_ema", state.g_ema)):
        tensors.update(_params_tensors(prefix, params))
    tensors.update(_opt_tensors("opt_d", state.opt_d))
    tensors.update(_opt_tensors("opt_g", state.opt_g))
    tensors.update({f"bank/{k}": v for k, v in state.bank.state().items()})
    return tensors


def save_state(state: TrainState, path) -> None:
    checkpoint.save(path, state.config.to_text(), state_tensors(state))


def load_state(path) -> TrainState:
    text, tensors = checkpoint.load(path)
    config = TrainConfig.from_text(text)
    state = init_state(config)

    def params(prefix, like: NetworkParams) -> NetworkParams:
        out = NetworkParams(like.arch, {k: tensors[f"{prefix}/{k}"] for k in like.tensors})
        out.validate()
        return out

    state.d = params("d", state.d)
    state.d_ema = params("d_ema", state.d_ema)
    state.g = params("g", state.g)
    state.g_ema = params("g_ema", state.g_ema)
    for prefix, st, like in (("opt_d", state.opt_d, state.d), ("opt_g", state.opt_g, state.g)):
        st.step = int(tensors[f"{prefix}/step"])
        st.m = {k: tensors[f"{prefix}/m/{k}"] for k in like.tensors}
        st.v = {k: tensors[f"{prefix}/v/{k}"] for k in like.tensors}
    bank_state = {k: tensors[f"bank/{k}"] for k in ("keys", "values", "ids", "seq")}
    state.bank = MemoryBank.from_state(config.bank_capacity, bank_state, int(tensors["meta/bank_pushed"]))
    state.step = int(tensors["meta/step"])
    return state


# ---------------------------------------------------------------------------
# driver

def _format_row(step: int, parts: dict[str, float]) -> str:
    values = [
        parts["total"], parts["loss_g_total"], parts["gaussian"], parts["cluster_real"],
        parts["cluster_fake"], parts["hinge_norm"], parts["sigma_hat_mean"], parts["sigma_hat_max"],
        parts["bank_fill"],
    ]
    return ",".join([str(step)] + [repr(float(v)) for v in values])


def train(config: TrainConfig, out_dir, resume: TrainState | None = None, until: int | None = None) -> TrainState:
    """Run training, writing ``metrics.csv`` and checkpoints into ``out_dir``.

    With ``resume`` the run continues from that state and appends to an
    existing metrics file.  ``until`` stops early at that step (the final
    checkpoint is still written).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = resume if resume is not None else init_state(config)
    config = state.config
    train_data, _ = make_splits(config)
    metrics_path = out / "metrics.csv"
    if resume is None or not metrics_path.exists():
        metrics_path.write_text(",".join(METRIC_COLUMNS) + "\n")
    stop = config.total_steps if until is None else min(until, config.total_steps)
    with metrics_path.open("a") as fh:
        while state.step < stop:
            parts = train_step(state, train_data)
            if state.step % config.log_interval == 0:
                fh.write(_format_row(state.step, parts) + "\n")
                fh.flush()
                log.info("step %d  D %.4f  G %.4f  sigma %.3f", state.step, parts["total"],
                         parts["loss_g_total"], parts["sigma_hat_mean"])
            if config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                save_state(state, out / f"checkpoint_{state.step}.bin")
    save_state(state, out / "checkpoint.bin")
    return state
