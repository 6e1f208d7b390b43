import numpy as np
import pytest

from structadv.data import distance_to_arms, export_csv, sample_prior, sample_spirals, spiral_curve


def test_noiseless_points_lie_on_curve():
    d = sample_spirals(500, noise_sd=0.0, seed=3)
    raw = d.raw()
    for arm in (0, 1):
        sel = d.labels == arm
        np.testing.assert_allclose(raw[sel], spiral_curve(d.t[sel], arm), atol=1e-12)


def test_arm_one_is_negated_arm_zero():
    t = np.linspace(1, 12, 50)
    np.testing.assert_array_equal(spiral_curve(t, 1), -spiral_curve(t, 0))


def test_radius_grows_with_angle():
    t = np.array([np.pi / 4, 4 * np.pi])
    np.testing.assert_allclose(np.linalg.norm(spiral_curve(t, 0), axis=1), [1 / 16, 1.0])


def test_balance_and_standardization():
    d = sample_spirals(4001, seed=0)
    counts = np.bincount(d.labels)
    assert abs(counts[0] - counts[1]) <= 1
    np.testing.assert_allclose(d.points.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(d.points.std(axis=0), 1.0, atol=1e-10)


def test_shared_transform():
    tr = sample_spirals(300, seed=0)
    va = sample_spirals(200, seed=1, transform=(tr.shift, tr.scale))
    np.testing.assert_array_equal(va.shift, tr.shift)


def test_noise_distance():
    d = sample_spirals(400, noise_sd=0.02, seed=5)
    near = distance_to_arms(d.raw())[np.arange(400), d.labels]
    assert np.mean(near <= 0.06) > 0.95


def test_seeded_determinism():
    a, b = sample_spirals(50, seed=9), sample_spirals(50, seed=9)
    np.testing.assert_array_equal(a.points, b.points)


def test_prior_moments():
    v = sample_prior(50000, 4, 0)
    assert np.all(np.abs(v.mean(axis=0)) < 0.02)
    assert np.all(np.abs(v.std(axis=0) - 1) < 0.02)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        sample_spirals(1)
    with pytest.raises(ValueError):
        sample_spirals(10, noise_sd=-1)
    with pytest.raises(ValueError):
        sample_prior(0, 3, 0)


def test_export_csv(tmp_path):
    d = sample_spirals(10, seed=0)
    export_csv(d, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x,y,label" and len(lines) == 11
    assert float(lines[1].split(",")[0]) == d.points[0, 0]
