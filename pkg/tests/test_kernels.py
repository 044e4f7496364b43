"""The numba and numpy kernel paths must agree; torch serves as an outside oracle."""

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_prior.kernels import numba_impl, numpy_impl

IMPLS = [numpy_impl, numba_impl]


@pytest.fixture(params=IMPLS, ids=lambda m: m.NAME)
def impl(request):
    return request.param


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 200), seed=st.integers(0, 10_000))
def test_l1_diff_agrees(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, n))
    b[::3] = a[::3]
    s0, g0 = numpy_impl.l1_diff(a, b)
    s1, g1 = numba_impl.l1_diff(a, b)
    assert s1 == pytest.approx(s0, rel=1e-12)
    np.testing.assert_array_equal(g0, g1)
    assert np.all(g1[::3] == 0)


def test_kl_moments_and_grad(impl, rng):
    x = rng.normal(1.0, 2.0, (4, 8, 8))
    mean, var = impl.kl_moments(x)
    assert mean == pytest.approx(x.mean(), rel=1e-12)
    assert var == pytest.approx(x.var(), rel=1e-12)
    g = impl.kl_grad(x, mean, var, True)
    np.testing.assert_allclose(g, (mean + (1 - 1 / var) * (x - mean)) / x.size, rtol=1e-12)
    np.testing.assert_allclose(impl.kl_grad(x, mean, var, False), np.full(x.shape, mean / x.size))


def test_adamw_matches_torch(impl, rng):
    torch = pytest.importorskip("torch")
    p0 = rng.standard_normal((3, 5))
    grads = rng.standard_normal((6, 3, 5))
    tp = torch.tensor(p0.copy(), requires_grad=True)
    opt = torch.optim.AdamW([tp], lr=0.05, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.01)
    p, m, v = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
    for k, g in enumerate(grads, start=1):
        tp.grad = torch.tensor(g)
        opt.step()
        impl.adamw_update(p, g, m, v, k, 0.05, 0.9, 0.99, 1e-8, 0.01)
    np.testing.assert_allclose(p, tp.detach().numpy(), rtol=1e-12, atol=1e-14)


def test_blend_and_vjp(impl, rng):
    e, b = rng.random((2, 3, 5, 6))
    a = rng.random((5, 6))
    np.testing.assert_allclose(impl.blend(e, a, b), e * a + b * (1 - a), rtol=1e-14)
    g = rng.standard_normal((3, 5, 6))
    ge, ga, gb = impl.blend_vjp(g, e, a, b)
    np.testing.assert_allclose(ge, g * a)
    np.testing.assert_allclose(gb, g * (1 - a))
    np.testing.assert_allclose(ga, (g * (e - b)).sum(0))


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_torch(impl, rng, k):
    torch = pytest.importorskip("torch")
    x = rng.standard_normal((3, 7, 9))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    ref = torch.nn.functional.conv2d(torch.tensor(x)[None], torch.tensor(w), torch.tensor(b), padding=k // 2)[0]
    np.testing.assert_allclose(impl.conv2d(x, w, b), ref.numpy(), rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3])
def test_conv2d_vjp_matches_torch(impl, rng, k):
    torch = pytest.importorskip("torch")
    x = rng.standard_normal((2, 6, 5))
    w = rng.standard_normal((3, 2, k, k))
    gy = rng.standard_normal((3, 6, 5))
    tx = torch.tensor(x, requires_grad=True)
    tw = torch.tensor(w, requires_grad=True)
    tb = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    out = torch.nn.functional.conv2d(tx[None], tw, tb, padding=k // 2)[0]
    out.backward(torch.tensor(gy))
    gx, gw, gb = impl.conv2d_vjp(x, w, gy)
    np.testing.assert_allclose(gx, tx.grad.numpy(), rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(gw, tw.grad.numpy(), rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(gb, tb.grad.numpy(), rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("f", [1, 2, 4])
def test_block_sum(impl, rng, f):
    g = rng.standard_normal((2, 8, 8))
    ref = np.array([[[g[c, i * f:(i + 1) * f, j * f:(j + 1) * f].sum() for j in range(8 // f)] for i in range(8 // f)] for c in range(2)])
    np.testing.assert_allclose(impl.block_sum(g, f), ref, rtol=1e-12)


def test_env_flag_selects_numpy():
    code = "import latent_prior.kernels as k; print(k.ACTIVE)"
    env = dict(os.environ, LATENT_PRIOR_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["LATENT_PRIOR_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_l1_diff_tie_threshold(impl):
    a = np.array([1.0, 1.0, 1.0, -2.0])
    b = np.array([1.0 + 1e-13, 0.5, 1.0, -2.0 - 1e-3])
    total, sign = impl.l1_diff(a, b, 1e-12)
    np.testing.assert_array_equal(sign, [0.0, 1.0, 0.0, 1.0])
    assert total == pytest.approx(0.501 + 1e-13)
