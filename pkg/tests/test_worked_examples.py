"""Small hand-computed cases for each module."""

import math

import numpy as np
import pytest

from latent_prior.backend import MockPointMassDenoiser, build_mock_backend
from latent_prior.losses import PriorWeights, combined_step
from latent_prior.renderers import blend, init_latent_map, init_layered
from latent_prior.renderers.base import mask_loss as _mask_loss
from latent_prior.schedule import NoiseSchedule, TimestepRange, build_linear_schedule, perturb, sample_timestep


def _scalar_schedule(alpha_bar):
    ab = np.array([alpha_bar])
    return NoiseSchedule(1 - ab, ab, np.sqrt(ab), np.sqrt(1 - ab))


def test_single_step_half():
    s = build_linear_schedule(1, 0.5, 0.5)
    assert s.alpha_bar[0] == pytest.approx(0.5)
    assert s.coefficients(0) == pytest.approx((0.70711, 0.70711), abs=1e-5)


def test_two_step_product():
    s = NoiseSchedule.from_betas([0.1, 0.2])
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72])
    assert s.coefficients(1) == pytest.approx((0.84853, 0.52915), abs=1e-5)


def test_uniform_timestep_mean():
    rng = np.random.default_rng(0)
    draws = [sample_timestep(rng, TimestepRange(0, 999)) for _ in range(100_000)]
    assert abs(np.mean(draws) - 499.5) <= 5


def test_scalar_perturbation():
    z = perturb(np.array(1.0), np.array(1.0), 0, _scalar_schedule(0.25))
    assert float(z) == pytest.approx(0.5 + math.sqrt(0.75))


def test_scalar_point_mass_prediction():
    s = _scalar_schedule(0.25)
    den = MockPointMassDenoiser(np.array([0.0]), s)
    z = perturb(np.array([2.0]), np.array([0.0]), 0, s)
    assert den.predict_noise(z, 0)[0] == pytest.approx(1.15470, abs=1e-5)


def test_lsd_gradient_noise_free(schedule):
    backend = build_mock_backend("mock-pointmass", (4, 4, 4), schedule, target_seed=9)
    v = np.random.default_rng(1).standard_normal((4, 4, 4))
    w = PriorWeights(0, 0, 1, lsd_weight_fn=lambda t: 0.3)
    t = 250
    rep = combined_step(v, t, np.zeros_like(v), backend, w, cond=backend.condition("x"))
    a, s = schedule.coefficients(t)
    np.testing.assert_allclose(rep.grad_v, 0.3 * a / s * (v - backend.denoiser.target), rtol=1e-10)


def test_zero_gradient_at_target_without_kl(schedule):
    backend = build_mock_backend("mock-linear", (4, 8, 8), schedule, target_seed=4, prior_std=0.0)
    mu = backend.denoiser.target
    eps = np.random.default_rng(2).standard_normal(mu.shape)
    rep = combined_step(mu, 600, eps, backend, PriorWeights(3.0, 0.0, 1.0), cond=backend.condition("x"))
    np.testing.assert_allclose(rep.grad_v, 0, atol=1e-10)


def test_scalar_blend():
    assert blend(np.array(0.8), np.array(0.5), np.array(0.2)) == pytest.approx(0.5)


def test_mask_loss_constant_offset():
    m = np.linspace(0, 0.9, 16).reshape(4, 4)
    assert _mask_loss(m + 0.1, m) == pytest.approx(0.1)


def test_residual_latent_passes_gradient_through(rng):
    from latent_prior.backend import MockLinearDecoder, MockLinearEncoder

    dec = MockLinearDecoder()
    enc = MockLinearEncoder(dec)
    r = init_layered(rng, rng.random((3, 16, 16)), np.zeros((16, 16)), enc, dec, base_channels=2, mask_weight=0.0)
    cot = rng.standard_normal(r.params["latent_residual"].shape)
    r.render()
    g = r.backward(cot)["latent_residual"]
    np.testing.assert_array_equal(g, cot)
    # finite-difference check of dv''/d(theta_latent) on one element
    base = np.sum(cot * r.render())
    r.params["latent_residual"][0, 0, 0] += 1e-3
    assert (np.sum(cot * r.render()) - base) / 1e-3 == pytest.approx(cot[0, 0, 0], rel=1e-9)


def test_initial_latent_is_centred():
    v = init_latent_map(np.random.default_rng(0)).render()
    assert abs(v.mean()) <= 3 / math.sqrt(v.size)
