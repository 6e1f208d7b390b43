import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structadv.autodiff import Tensor, grad
from structadv.objectives import (
    ObjectiveConfig,
    batch_gaussian_stats,
    bhattacharyya,
    cluster_terms,
    discriminator_loss,
    distance,
    generator_loss,
    hinge_gan_losses,
    hinge_norm,
    jsd_gaussian,
)


def two_pass_stats(Z):
    n = len(Z)
    mu = [sum(r[j] for r in Z) / n for j in range(len(Z[0]))]
    var = [sum((r[j] - mu[j]) ** 2 for r in Z) / n for j in range(len(Z[0]))]
    return mu, var


def test_stats_match_two_pass_oracle(rng):
    Z = rng.standard_normal((7, 3)) * 3 + 1
    mu, var = two_pass_stats(Z.tolist())
    stats = batch_gaussian_stats(Z)
    np.testing.assert_allclose(stats.mu.data, mu, rtol=1e-13)
    np.testing.assert_allclose(stats.var.data, var, rtol=1e-13)


def test_variance_floor_applies():
    stats = batch_gaussian_stats(np.ones((4, 2)))
    np.testing.assert_array_equal(stats.var.data, [1e-6, 1e-6])


def test_stats_need_two_rows():
    with pytest.raises(ValueError):
        batch_gaussian_stats(np.ones((1, 3)))


def test_analytic_one_dim_cases():
    real = np.array([[-1.0], [1.0]])
    fake = np.array([[1.0], [3.0]])
    assert abs(jsd_gaussian(real, fake).item() - math.log(2)) <= 1e-9
    assert abs(bhattacharyya(real, fake).item() - 0.5) <= 1e-9


def test_identical_batches_are_zero(rng):
    Z = rng.standard_normal((16, 4))
    assert abs(jsd_gaussian(Z, Z).item()) <= 1e-10
    assert abs(bhattacharyya(Z, Z).item()) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), d=st.integers(1, 6))
def test_distances_nonnegative_and_symmetric(seed, n, d):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, d)) * rng.uniform(0.1, 3)
    b = rng.standard_normal((n, d)) + rng.uniform(-2, 2)
    for fn in (jsd_gaussian, bhattacharyya):
        assert fn(a, b).item() >= -1e-10
        assert abs(fn(a, b).item() - fn(b, a).item()) <= 1e-10 * (1 + abs(fn(a, b).item()))


def test_width_mismatch_and_unknown_distance():
    with pytest.raises(ValueError):
        jsd_gaussian(np.ones((3, 2)), np.ones((3, 4)))
    with pytest.raises(ValueError):
        distance("kl", np.ones((3, 2)), np.ones((3, 2)))


def test_cluster_terms_hand_case():
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    nb = np.array([[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 1.0]]])  # K = 2
    real, fake = cluster_terms(z, z, nb, nb)
    # per-row cosine sums 1 and 2, over N*K = 4
    assert real.item() == pytest.approx(0.75)
    assert fake.item() == pytest.approx(0.75)
    _, fake_n = cluster_terms(z, z, nb, nb, fake_norm="n")
    assert fake_n.item() == pytest.approx(1.5)


def test_cluster_terms_perfect_agreement_is_one(rng):
    z = rng.standard_normal((5, 3))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    nb = np.repeat(z[:, None, :], 4, axis=1)
    real, _ = cluster_terms(z, z, nb, nb)
    assert real.item() == pytest.approx(1.0, abs=1e-12)


def test_cluster_terms_reject_empty_neighbors():
    z = np.ones((2, 2)) / math.sqrt(2)
    with pytest.raises(ValueError):
        cluster_terms(z, z, np.zeros((2, 0, 2)), np.zeros((2, 0, 2)))


def test_neighbors_carry_no_gradient():
    z = Tensor(np.array([[0.6, 0.8]]), requires_grad=True)
    nb = Tensor(np.array([[[1.0, 0.0]]]), requires_grad=True)
    real, _ = cluster_terms(z, z, nb, nb)
    gz, gnb = grad(real, [z, nb])
    np.testing.assert_array_equal(gz.data, [[1.0, 0.0]])
    np.testing.assert_array_equal(gnb.data, np.zeros((1, 1, 2)))


def test_hinge_norm_cases():
    assert hinge_norm(np.array([[0.6, 0.8]])).item() == 0.0
    assert hinge_norm(np.array([[3.0, 4.0], [0.1, 0.0]])).item() == pytest.approx(2.0)


def test_discriminator_loss_assembly(rng):
    cfg = ObjectiveConfig(lambda_c=3.0, lambda_s=5.0, lambda_h=4.0)
    zr, zf = rng.standard_normal((6, 3)), rng.standard_normal((6, 3)) + 0.5
    zr_t, zf_t = zr * 2, zf * 2
    zr, zf = zr / np.linalg.norm(zr, axis=1, keepdims=True), zf / np.linalg.norm(zf, axis=1, keepdims=True)
    nbr, nbf = np.repeat(zr[:, None], 2, 1), np.repeat(zf[:, None], 2, 1)
    sigma = np.array([0.5, 1.5, 2.0, 1.0, 0.7, 1.2])
    out = discriminator_loss(zr, zf, zr_t, zf_t, nbr, nbf, sigma, cfg)
    d = jsd_gaussian(zr, zf).item()
    cr, cf = cluster_terms(zr, zf, nbr, nbf)
    smooth = np.mean(np.abs(sigma - 1))
    hinge = hinge_norm(np.concatenate([zr_t, zf_t])).item()
    expected = -d - 3 * cr.item() + 3 * cf.item() + 5 * smooth + 4 * hinge
    assert out.total.item() == pytest.approx(expected, rel=1e-12)
    parts = out.floats()
    assert parts["smoothness"] == pytest.approx(smooth)
    g = generator_loss(zr, zf, nbf, cfg)
    assert g.total.item() == pytest.approx(d - 3 * cf.item(), rel=1e-12)


def test_losses_skip_missing_terms(rng):
    zr, zf = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    out = discriminator_loss(zr, zf)
    assert out.total.item() == pytest.approx(-jsd_gaussian(zr, zf).item())
    assert math.isnan(out.floats()["cluster_real"])


def test_hinge_gan_losses():
    ld, lg = hinge_gan_losses(np.array([2.0, 0.0]), np.array([-2.0, 0.5]))
    # real: max(0, -1), max(0, 1) -> 0.5 ; fake: max(0, -1), max(0, 1.5) -> 0.75
    assert ld.item() == pytest.approx(1.25)
    assert lg.item() == pytest.approx(0.75)
