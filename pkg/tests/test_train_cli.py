import xml.etree.ElementTree as ET

import numpy as np
import pytest

from structadv.assessment import EVAL_COLUMNS, evaluate, generation_diagnostics, jacobian_norms
from structadv.cli import main
from structadv.config import TrainConfig
from structadv.plotting import pca_2d
from structadv.train import METRIC_COLUMNS, init_state, load_state, make_splits, save_state, train, train_step

TINY = TrainConfig(hidden_width=16, hidden_layers=2, embed_dim=8, prior_dim=4, batch_size=16, n_train=64,
                   n_val=40, bank_capacity=64, knn_k=3, total_steps=12, log_interval=2)


def test_zero_steps_writes_header_and_checkpoint(tmp_path):
    state = train(TINY.replace(total_steps=0), tmp_path)
    assert state.step == 0
    assert (tmp_path / "metrics.csv").read_text() == ",".join(METRIC_COLUMNS) + "\n"
    assert (tmp_path / "checkpoint.bin").exists()


def test_smoke_run_logs_finite_values(tmp_path):
    train(TINY, tmp_path)
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0].split(",") == list(METRIC_COLUMNS)
    assert len(rows) == 1 + TINY.total_steps // TINY.log_interval
    last = dict(zip(METRIC_COLUMNS, map(float, rows[-1].split(","))))
    assert 0 < last["sigma_hat_mean"] < 10
    assert np.isfinite(last["loss_d_total"]) and np.isfinite(last["cluster_real"])
    assert last["bank_fill"] == 1.0


def test_cluster_terms_wait_for_bank():
    state = init_state(TINY)
    data, _ = make_splits(TINY)
    parts = train_step(state, data)
    assert np.isnan(parts["cluster_real"])
    for _ in range(4):
        parts = train_step(state, data)
    assert np.isfinite(parts["cluster_real"])


def test_hinge_baseline_runs_without_bank(tmp_path):
    state = train(TINY.replace(distance="hinge"), tmp_path)
    assert len(state.bank) == 0
    assert state.d.arch.out_dim == 1


def test_repeat_runs_are_identical(tmp_path):
    train(TINY, tmp_path / "a")
    train(TINY, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    train(TINY, tmp_path / "full")
    train(TINY, tmp_path / "part", until=6)
    resumed = load_state(tmp_path / "part" / "checkpoint.bin")
    assert resumed.step == 6
    train(TINY, tmp_path / "part", resume=resumed)
    assert (tmp_path / "full" / "metrics.csv").read_bytes() == (tmp_path / "part" / "metrics.csv").read_bytes()
    a = load_state(tmp_path / "full" / "checkpoint.bin")
    b = load_state(tmp_path / "part" / "checkpoint.bin")
    for k in a.d.tensors:
        assert a.d.tensors[k].tobytes() == b.d.tensors[k].tobytes()


def test_state_round_trip(tmp_path):
    state = init_state(TINY)
    data, _ = make_splits(TINY)
    for _ in range(5):
        train_step(state, data)
    save_state(state, tmp_path / "s.bin")
    clone = load_state(tmp_path / "s.bin")
    assert clone.step == 5 and clone.config == TINY
    assert train_step(clone, data) == train_step(state, data)


def test_evaluate_is_deterministic():
    state = init_state(TINY)
    a, b = evaluate(state, "val", repeats=3), evaluate(state, "val", repeats=3)
    assert a == b
    assert 0 <= a.kmeans_acc_mean <= 1 and 0 <= a.manifold_rate <= 1
    with pytest.raises(ValueError):
        evaluate(state, "test")


def test_generation_diagnostics_on_real_points():
    state = init_state(TINY)
    _, val = make_splits(TINY)
    arm0, near = generation_diagnostics(state, val, n=100)
    assert 0 <= arm0 <= 1 and 0 <= near <= 1


def test_jacobian_norms_positive():
    state = init_state(TINY)
    _, val = make_splits(TINY)
    sig = jacobian_norms(state, val.points, steps=5, chunk=16)
    assert sig.shape == (len(val),) and np.all(sig > 0)


def test_pca_orders_variance(rng):
    X = rng.standard_normal((300, 5)) * [0.5, 3.0, 1.0, 0.1, 2.0]
    proj = pca_2d(X)
    assert proj.shape == (300, 2)
    assert proj[:, 0].var() >= proj[:, 1].var()
    assert proj[:, 0].var() == pytest.approx(X[:, 1].var(), rel=0.1)


# -- CLI ---------------------------------------------------------------------

def write_config(tmp_path, cfg=TINY):
    path = tmp_path / "cfg.txt"
    path.write_text(cfg.to_text())
    return path


def test_cli_train_eval_plot(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY.replace(total_steps=4))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "checkpoint.bin"
    csv = tmp_path / "eval.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--split", "val", "--out", str(csv), "--repeats", "2"]) == 0
    assert main(["eval", "--checkpoint", str(ckpt), "--split", "train", "--out", str(csv), "--repeats", "2"]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == ",".join(EVAL_COLUMNS) and len(lines) == 3
    assert main(["plot", "--checkpoint", str(ckpt), "--out", str(tmp_path / "plots")]) == 0
    for name in ("data.svg", "generated.svg", "embedding_pca.svg"):
        root = ET.parse(tmp_path / "plots" / name).getroot()
        assert root.tag.endswith("svg")
    # the data plot draws one marker per validation point
    root = ET.parse(tmp_path / "plots" / "data.svg").getroot()
    group = next(el for el in root.iter() if el.get("id") == "points")
    assert sum(1 for el in group.iter() if el.tag.endswith("use")) == TINY.n_val


def test_cli_export_data(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["export-data", "--config", str(cfg), "--out", str(tmp_path / "d.csv")]) == 0
    assert len((tmp_path / "d.csv").read_text().splitlines()) == TINY.n_train + 1


def test_cli_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("not_a_key = 3\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.bin")]) == 1
    (tmp_path / "junk.bin").write_bytes(b"nope")
    assert main(["eval", "--checkpoint", str(tmp_path / "junk.bin")]) == 1


def test_cli_numeric_failure(tmp_path):
    cfg = write_config(tmp_path, TINY.replace(lr=1e300, total_steps=50))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
