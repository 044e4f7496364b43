"""Pure-numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``numba_impl``.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def l1_diff(a, b, tie_atol=0.0):
    """Return ``(sum |a - b|, sign(a - b))``; the sign is 0 where ``|a - b| <= tie_atol``."""
    d = a - b
    ad = np.abs(d)
    sign = np.sign(d)
    if tie_atol:
        sign[ad <= tie_atol] = 0.0
    return float(ad.sum()), sign


def kl_moments(x):
    """Population mean and variance from correctly rounded sums.

    ``math.fsum`` makes both moments independent of element order, so the
    result is exactly invariant under permutation of ``x``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.size
    mean = math.fsum(x) / n
    d = x - mean
    return mean, math.fsum(d * d) / n


def kl_grad(x, mean, var, var_active):
    n = x.size
    c = 1.0 - 1.0 / var if var_active else 0.0
    return (mean + c * (x - mean)) / n


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    denom = np.sqrt(v) / np.sqrt(bc2) + eps
    p -= (lr / bc1) * m / denom


def blend(edit, alpha, base):
    return edit * alpha + base * (1.0 - alpha)


def blend_vjp(g, edit, alpha, base):
    g_edit = g * alpha
    g_base = g * (1.0 - alpha)
    g_alpha = (g * (edit - base)).sum(axis=0)
    return g_edit, g_alpha, g_base


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def conv2d(x, w, b):
    """Same-padded stride-1 cross-correlation. x: (Ci,H,W), w: (Co,Ci,K,K)."""
    k = w.shape[-1]
    win = sliding_window_view(_pad(x, k // 2), (k, k), axis=(1, 2))
    return np.einsum("oikl,ihwkl->ohw", w, win, optimize=True) + b[:, None, None]


def conv2d_vjp(x, w, gy):
    k = w.shape[-1]
    p = k // 2
    _, h, wd = x.shape
    win = sliding_window_view(_pad(x, p), (k, k), axis=(1, 2))
    gw = np.einsum("ohw,ihwkl->oikl", gy, win, optimize=True)
    gb = gy.sum(axis=(1, 2))
    gxp = np.zeros((x.shape[0], h + 2 * p, wd + 2 * p))
    for ky in range(k):
        for kx in range(k):
            gxp[:, ky : ky + h, kx : kx + wd] += np.tensordot(w[:, :, ky, kx], gy, axes=(0, 0))
    gx = gxp[:, p : p + h, p : p + wd] if p else gxp
    return np.ascontiguousarray(gx), gw, gb


def block_sum(g, f):
    """Sum over non-overlapping f x f blocks of a (C, H, W) array."""
    c, h, w = g.shape
    return g.reshape(c, h // f, f, w // f, f).sum(axis=(2, 4))
