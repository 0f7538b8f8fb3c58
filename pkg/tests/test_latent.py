import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import numeric_grad, rel_err
from rkbinn.bilinear import RKModel, model_forward
from rkbinn.dynamics import Trajectory
from rkbinn.latent import (LatentModel, align_latent, check_observation_map, latent_backward, latent_forward,
                           make_latent_model, random_observation_map, synthesize_observations)
from rkbinn.numerics import DimensionError, make_rng, standardize_stats
from test_bilinear import random_block


def test_observation_examples(rng):
    latent = Trajectory(0.0, 0.01, rng.standard_normal((20, 3)))
    H = np.vstack([np.eye(3), np.zeros((2, 3))])
    obs, _ = synthesize_observations(latent, H)
    assert obs.states.shape == (20, 5) and obs.h == latent.h
    assert np.array_equal(obs.states[:, :3], latent.states) and not obs.states[:, 3:].any()
    with pytest.raises(ValueError, match="rank"):
        synthesize_observations(latent, np.ones((5, 3)))
    with pytest.raises(DimensionError):
        check_observation_map(np.eye(3))


def test_random_observation_map_is_well_conditioned():
    for s in range(20):
        H = random_observation_map(5, 3, make_rng(s, "observation"))
        assert H.shape == (5, 3) and np.abs(H).max() <= 1
        assert np.linalg.svd(H, compute_uv=False)[-1] > 0.1
    assert np.array_equal(random_observation_map(5, 3, make_rng(4, "o")), random_observation_map(5, 3, make_rng(4, "o")))


def test_zero_dynamics_is_identity(rng):
    m = make_latent_model(5, 3, 4, 0.01, rng)
    for p in m.dynamics.params().values():
        p[...] = 0.0
    y = rng.standard_normal((4, 5))
    assert np.array_equal(latent_forward(m, y), y)


@pytest.mark.parametrize("n_blocks", [1, 4])
def test_identity_encoder_reduces_to_plain_model(rng, n_blocks):
    dyn = RKModel(random_block(rng), n_blocks, 0.05)
    m = LatentModel(np.eye(3), np.zeros(3), dyn, np.eye(3))
    x = rng.standard_normal((6, 3))
    assert np.array_equal(latent_forward(m, x), model_forward(dyn, x))


def test_latent_shape_checks(rng):
    m = make_latent_model(5, 3, 1, 0.01, rng)
    with pytest.raises(DimensionError):
        latent_forward(m, np.zeros(4))
    with pytest.raises(DimensionError):
        LatentModel(np.zeros((3, 5)), np.zeros(3), m.dynamics, np.zeros((5, 2)))
    with pytest.raises(ValueError):
        LatentModel(m.encoder, m.encoder_bias, m.dynamics, m.decoder, (np.zeros(5), np.zeros(5)))


@pytest.mark.parametrize("n_blocks", [1, 4])
@pytest.mark.parametrize("normalized", [False, True])
def test_latent_backward_matches_finite_differences(rng, n_blocks, normalized):
    norm = standardize_stats(rng.standard_normal((40, 5)) * [1, 2, 3, 4, 5] + 2) if normalized else None
    m = make_latent_model(5, 3, n_blocks, 0.1, rng, norm=norm)
    for p in m.params().values():
        p += 0.1 * rng.standard_normal(p.shape)
    Y = rng.standard_normal((4, 5))
    G = rng.standard_normal((4, 5))
    grads, gY = latent_backward(m, Y, G)

    def loss():
        return float(np.sum(G * latent_forward(m, Y)))

    names = list(m.params())
    num = numeric_grad(loss, [m.params()[k] for k in names])
    assert max(rel_err(grads[k], g) for k, g in zip(names, num)) < 1e-5
    assert rel_err(gY, numeric_grad(loss, [Y])[0]) < 1e-5


def test_alignment_examples(rng):
    Z = rng.standard_normal((200, 3))
    a = align_latent(Z, Z)
    assert np.allclose(a.A, np.eye(3), atol=1e-12) and np.allclose(a.b, 0, atol=1e-12)
    assert a.residual_rmse < 1e-12
    Q = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    a = align_latent(Z @ Q.T, Z)
    assert np.allclose(a.A, Q.T, atol=1e-10) and a.residual_rmse < 1e-12
    noise = rng.standard_normal((20000, 3))
    a = align_latent(noise, rng.standard_normal((20000, 3)))
    assert np.max(np.abs(a.A)) < 0.05 and a.residual_rmse == pytest.approx(1.0, abs=0.05)
    with pytest.raises(np.linalg.LinAlgError):
        align_latent(np.outer(Z[:, 0], [1, 2, 3]), Z)
    with pytest.raises(ValueError):
        align_latent(Z[:3], Z[:3])


@given(st.integers(0, 2 ** 31))
def test_alignment_invariant_under_affine_warp(seed):
    rng = np.random.default_rng(seed)
    learned = rng.standard_normal((100, 3))
    truth = np.sin(learned) + 0.1 * rng.standard_normal((100, 3))
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    warped = learned @ A.T + rng.standard_normal(3)
    r0 = align_latent(learned, truth).residual_rmse
    r1 = align_latent(warped, truth).residual_rmse
    assert r1 == pytest.approx(r0, rel=1e-8, abs=1e-12)
    assert np.allclose(align_latent(warped, truth).apply(warped), align_latent(learned, truth).apply(learned),
                       atol=1e-8)


def test_make_latent_model_is_deterministic():
    a = make_latent_model(5, 3, 4, 0.01, make_rng(2, "init"))
    b = make_latent_model(5, 3, 4, 0.01, make_rng(2, "init"))
    for k, v in a.params().items():
        assert np.array_equal(v, b.params()[k])
    assert not a.encoder_bias.any()
