import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_prior.errors import ConfigError
from latent_prior.schedule import (
    NoiseSchedule,
    TimestepRange,
    build_linear_schedule,
    perturb,
    sample_timestep,
)


def _reference_alpha_bar(T=1000, b0=8.5e-4, b1=1.2e-2):
    # scalar loop, independent of the vectorised build
    out, prod = [], 1.0
    for i in range(T):
        root = math.sqrt(b0) + (math.sqrt(b1) - math.sqrt(b0)) * i / (T - 1)
        prod *= 1.0 - root * root
        out.append(prod)
    return np.array(out)


def test_default_schedule_matches_scalar_reference(schedule):
    np.testing.assert_allclose(schedule.alpha_bar, _reference_alpha_bar(), rtol=1e-12)
    assert schedule.num_steps == 1000
    assert schedule.betas[0] == pytest.approx(8.5e-4, rel=1e-12)
    assert schedule.betas[-1] == pytest.approx(1.2e-2, rel=1e-12)


def test_variance_preserving_and_monotone(schedule):
    assert np.max(np.abs(schedule.alpha_t**2 + schedule.sigma_t**2 - 1)) <= 1e-6
    assert np.all(np.diff(schedule.alpha_bar) < 0)


def test_linear_interpolation_endpoints():
    s = build_linear_schedule(10, 1e-4, 2e-2, interpolation="linear")
    np.testing.assert_allclose(s.betas, np.linspace(1e-4, 2e-2, 10))


def test_single_step_schedule():
    s = build_linear_schedule(1, 0.01, 0.01)
    assert s.alpha_bar[0] == pytest.approx(0.99)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"num_steps": 0},
        {"beta_start": 0.0},
        {"beta_start": 0.02, "beta_end": 0.01},
        {"beta_end": 1.0},
        {"interpolation": "cosine"},
    ],
)
def test_invalid_schedule_rejected(kwargs):
    with pytest.raises(ConfigError):
        build_linear_schedule(**kwargs)


def test_arrays_are_read_only(schedule):
    with pytest.raises(ValueError):
        schedule.alpha_t[0] = 0.0


def test_from_betas_rejects_out_of_range():
    with pytest.raises(ConfigError):
        NoiseSchedule.from_betas([0.1, 1.0])


@pytest.mark.parametrize("t", [-1, 1000])
def test_coefficients_out_of_range(schedule, t):
    with pytest.raises(ValueError):
        schedule.coefficients(t)


def test_perturb_formula(schedule, rng):
    v, eps = rng.standard_normal((2, 4, 8, 8))
    a, s = math.sqrt(schedule.alpha_bar[500]), math.sqrt(1 - schedule.alpha_bar[500])
    np.testing.assert_allclose(perturb(v, eps, 500, schedule), a * v + s * eps, rtol=1e-14)


def test_perturb_shape_mismatch(schedule):
    with pytest.raises(ValueError):
        perturb(np.zeros((4, 8, 8)), np.zeros((4, 8, 7)), 10, schedule)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(0, 999), scale=st.floats(0.1, 10))
def test_perturb_is_linear_in_inputs(schedule, t, scale):
    rng = np.random.default_rng(t)
    v, eps = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(
        perturb(scale * v, scale * eps, t, schedule), scale * perturb(v, eps, t, schedule), rtol=1e-12, atol=1e-12
    )


def test_timestep_sampling_covers_inclusive_range():
    rng = np.random.default_rng(0)
    tr = TimestepRange(3, 6)
    seen = {sample_timestep(rng, tr) for _ in range(400)}
    assert seen == {3, 4, 5, 6}


@pytest.mark.parametrize("lo,hi", [(10, 5), (-1, 5), (0, 1000)])
def test_timestep_range_validation(lo, hi):
    with pytest.raises(ConfigError):
        TimestepRange(lo, hi).validate(1000)
