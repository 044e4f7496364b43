import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latent_prior import checks, losses
from latent_prior.backend import MockLinearDecoder, MockTanhDecoder, build_mock_backend
from latent_prior.errors import BackendError, ConfigError, DegenerateVarianceError
from latent_prior.losses import (
    FMReduction,
    JacobianMode,
    PriorWeights,
    combined_step,
    fm_branch_gradients,
    fm_gradient,
    fm_loss,
    kl_loss,
    lsd_gradient,
)
from latent_prior.schedule import perturb

from _helpers import fd_grad


# KL term


def test_kl_standard_latent_is_one(rng):
    x = rng.standard_normal(256)
    x = (x - x.mean()) / x.std()
    assert kl_loss(x)[0] == pytest.approx(1.0, abs=1e-9)


def test_kl_four_point_value():
    assert kl_loss(np.array([2.0, 2.0, -2.0, -2.0]))[0] == pytest.approx(0.5 * (5 - math.log(4)), abs=1e-9)


def test_kl_matches_torch_autograd(rng):
    torch = pytest.importorskip("torch")
    v = rng.normal(0.4, 1.3, (4, 8, 8))
    x = torch.tensor(v, dtype=torch.float64, requires_grad=True)
    mean = x.mean()
    var = ((x - mean) ** 2).mean()
    loss = 0.5 * (mean**2 + var - torch.log(var) + 1)
    loss.backward()
    val, g = kl_loss(v)
    assert val == pytest.approx(loss.item(), rel=1e-13)
    np.testing.assert_allclose(g, x.grad.numpy(), rtol=1e-10, atol=1e-15)


def test_kl_gradient_fd(rng):
    v = rng.normal(-0.2, 0.8, (4, 8, 8))
    g = kl_loss(v)[1]
    fd = fd_grad(lambda y: kl_loss(y)[0], v, h=1e-5)
    assert checks.rel_error(g, fd) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 64), elements=st.floats(-50, 50)), st.randoms(use_true_random=False))
def test_kl_permutation_invariance_exact(x, rnd):
    perm = list(range(x.size))
    rnd.shuffle(perm)
    if x.var() < losses.VAR_FLOOR:
        return
    assert kl_loss(x)[0] == kl_loss(x[perm])[0]


def test_kl_step_moves_variance_toward_one(rng):
    for scale in (0.3, 3.0):
        v = scale * rng.standard_normal(512)
        g = kl_loss(v)[1]
        assert abs((v - 1e-2 * g).var() - 1) < abs(v.var() - 1)


def test_kl_floor_and_strict():
    flat = np.full(16, 0.5)
    val, g = kl_loss(flat)
    assert math.isfinite(val)
    # only the mean term remains below the floor
    np.testing.assert_allclose(g, np.full(16, 0.5 / 16))
    with pytest.raises(DegenerateVarianceError):
        kl_loss(flat, strict=True)


def test_kl_needs_two_elements():
    with pytest.raises(ValueError):
        kl_loss(np.array([1.0]))


# score distillation


def test_lsd_gradient_is_weighted_residual(rng):
    v, eh, e = rng.standard_normal((3, 4, 4, 4))
    np.testing.assert_allclose(lsd_gradient(v, eh, e, 0.5), 0.5 * (eh - e))


def test_lsd_gradient_shape_checked(rng):
    with pytest.raises(ValueError):
        lsd_gradient(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 3)))


def test_point_mass_target_is_fixed_point(schedule):
    backend = build_mock_backend("mock-pointmass", (4, 8, 8), schedule, target_seed=3)
    mu = backend.denoiser.target
    eps = np.random.default_rng(0).standard_normal(mu.shape)
    rep = combined_step(mu, 200, eps, backend, PriorWeights(0, 0, 1), cond=backend.condition("p"))
    np.testing.assert_allclose(rep.grad_v, 0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(t=st.integers(20, 980))
def test_lsd_gradient_points_at_target(schedule, t):
    backend = build_mock_backend("mock-pointmass", (4, 4, 4), schedule, target_seed=1)
    rng = np.random.default_rng(t)
    v, eps = rng.standard_normal((2, 4, 4, 4))
    rep = combined_step(v, t, eps, backend, PriorWeights(0, 0, 1), cond=backend.condition("p"))
    a, s = schedule.coefficients(t)
    np.testing.assert_allclose(rep.grad_lsd, a / s * (v - backend.denoiser.target), rtol=1e-9, atol=1e-12)


# feature matching


def _dec():
    return MockLinearDecoder(seed=3, latent_channels=4)


def test_fm_loss_reductions(rng):
    dec = _dec()
    v, r = rng.standard_normal((2, 4, 8, 8))
    total, diffs = fm_loss(v, r, dec, reduction=FMReduction.SUM)
    ref = sum(np.abs(a - b).sum() for a, b in zip(dec.decode_features(v), dec.decode_features(v + r)))
    assert total == pytest.approx(ref, rel=1e-12)
    norm, _ = fm_loss(v, r, dec)
    assert norm == pytest.approx(ref / (3 * v.size), rel=1e-12)
    assert len(diffs) == 3


def test_fm_zero_residual(rng):
    v = rng.standard_normal((4, 8, 8))
    loss, g_clean, g_pert = fm_branch_gradients(v, np.zeros_like(v), _dec())
    assert loss == 0.0
    np.testing.assert_array_equal(g_clean, 0)
    np.testing.assert_array_equal(g_pert, 0)


def test_fm_rejects_empty_levels(rng):
    v = rng.standard_normal((4, 8, 8))
    with pytest.raises(ValueError):
        fm_loss(v, v, _dec(), levels=[])


@pytest.mark.parametrize("reduction", list(FMReduction))
def test_fm_branches_match_fd(rng, reduction):
    dec = _dec()
    v, r = rng.standard_normal((2, 4, 8, 8))
    _, g_clean, g_pert = fm_branch_gradients(v, r, dec, reduction=reduction)
    scale = losses._fm_scale(3, v.size, reduction)
    frozen_pert, frozen_clean = dec.decode_features(v + r), dec.decode_features(v)

    def against(frozen):
        return lambda y: scale * sum(np.abs(a - b).sum() for a, b in zip(dec.decode_features(y), frozen))

    assert checks.rel_error(g_clean, fd_grad(against(frozen_pert), v)) <= 1e-5
    assert checks.rel_error(g_pert, fd_grad(against(frozen_clean), v + r)) <= 1e-5


def test_fm_linear_decoder_stop_gradient_is_flat(rng):
    # F(v) - F(v + r) = -F(r) for a linear decoder, so the loss ignores v
    dec = _dec()
    v, r = rng.standard_normal((2, 4, 8, 8))
    g = fm_gradient(v, r, dec, mode=JacobianMode.STOP_GRADIENT)
    _, g_clean, _ = fm_branch_gradients(v, r, dec)
    assert np.linalg.norm(g) <= 1e-12 * np.linalg.norm(g_clean)


def test_fm_stop_gradient_matches_fd_on_curved_decoder(rng):
    dec = MockTanhDecoder(_dec(), gain=0.5)
    v, r = rng.standard_normal((2, 4, 8, 8))
    g = fm_gradient(v, r, dec, mode=JacobianMode.STOP_GRADIENT)
    fd = fd_grad(lambda y: fm_loss(y, r, dec)[0], v)
    assert checks.rel_error(g, fd) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(t=st.integers(0, 999))
def test_mode_relation_any_t(schedule, t):
    rng = np.random.default_rng(t)
    v, r = rng.standard_normal((2, 4, 4, 4))
    dec = _dec()
    a, _ = schedule.coefficients(t)
    _, _, g_pert = fm_branch_gradients(v, r, dec)
    diff = fm_gradient(v, r, dec, mode=JacobianMode.IDENTITY_APPROX, alpha_t=a) - fm_gradient(
        v, r, dec, mode=JacobianMode.STOP_GRADIENT
    )
    assert np.max(np.abs(diff - a * g_pert)) <= 1e-9


def test_dropping_identity_factor_fails_mode_check(monkeypatch):
    assert checks.check_mode_relation().passed
    monkeypatch.setattr(losses, "_combine_fm", lambda g_clean, g_pert, mode, alpha_t: g_pert + g_clean)
    res = checks.check_mode_relation()
    assert not res.passed
    assert all(not m.passed for m in res.measurements)


# combined step


def test_combined_step_is_weighted_sum(schedule, rng):
    backend = build_mock_backend("mock-linear", (4, 8, 8), schedule, target_seed=2)
    v, eps = rng.standard_normal((2, 4, 8, 8))
    cond = backend.condition("p")
    w = PriorWeights(3.0, 0.1, 1.0)
    rep = combined_step(v, 321, eps, backend, w, cond=cond)
    np.testing.assert_allclose(rep.grad_v, 3.0 * rep.grad_fm + 0.1 * rep.grad_kl + rep.grad_lsd, rtol=1e-13)
    assert rep.loss_total == pytest.approx(3.0 * rep.loss_fm + 0.1 * rep.loss_kl + rep.loss_lsd)
    assert rep.t_used == 321
    # components agree with the standalone functions
    z = perturb(v, eps, 321, schedule)
    from latent_prior.backend import guided_noise

    r = guided_noise(backend.denoiser, z, 321, cond, 7.5) - eps
    np.testing.assert_allclose(rep.grad_lsd, r)
    assert rep.loss_lsd == pytest.approx(0.5 * np.sum(r * r))
    np.testing.assert_allclose(rep.grad_kl, kl_loss(v)[1])


def test_combined_step_zero_weights(schedule, rng):
    backend = build_mock_backend("mock-pointmass", (4, 4, 4), schedule)
    v, eps = rng.standard_normal((2, 4, 4, 4))
    rep = combined_step(v, 100, eps, backend, PriorWeights(0, 0, 0))
    np.testing.assert_array_equal(rep.grad_v, 0)


def test_combined_step_wraps_decoder_failure(schedule, rng):
    backend = build_mock_backend("mock-pointmass", (4, 4, 4), schedule)

    class Bad:
        level_names = ("x",)

        def decode_features(self, v, levels=None):
            raise RuntimeError("decoder exploded")

    backend.decoder = Bad()
    v, eps = rng.standard_normal((2, 4, 4, 4))
    with pytest.raises(BackendError, match="decoder"):
        combined_step(v, 100, eps, backend, PriorWeights())


@pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
def test_prior_weights_validated(bad):
    with pytest.raises(ConfigError):
        PriorWeights(lambda1=bad)


def test_prior_weights_all_zero():
    assert PriorWeights(0, 0, 0).all_zero
    assert not PriorWeights().all_zero


def test_fm_identity_level_is_l1_of_residual(rng):
    dec = MockLinearDecoder(mixes=[np.eye(4)], factors=[1])
    v, r = rng.standard_normal((2, 4, 8, 8))
    assert fm_loss(v, r, dec, reduction="sum")[0] == pytest.approx(np.abs(r).sum(), rel=1e-12)
    assert fm_loss(v, r, dec)[0] == pytest.approx(np.abs(r).sum() / r.size, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_fm_shift_invariance_on_linear_decoder(c, seed):
    rng = np.random.default_rng(seed)
    v, r = rng.standard_normal((2, 4, 8, 8))
    dec = _dec()
    assert fm_loss(v + c, r, dec)[0] == pytest.approx(fm_loss(v, r, dec)[0], rel=1e-9)
