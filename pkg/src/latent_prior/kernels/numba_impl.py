"""numba-compiled versions of the hot kernels.

Signatures match ``numpy_impl``. Thin Python wrappers flatten arrays so the
compiled loops only ever see 1-d or fixed-rank contiguous inputs.
All loops run serially so results are bit-reproducible run to run; the
convolutions use compiled im2col/col2im around BLAS matrix products.
"""

import numpy as np
from numba import njit

from . import numpy_impl

NAME = "numba"


@njit(cache=True)
def _l1_diff(a, b, tie_atol, sign):
    # branch-free: random signs defeat the branch predictor
    total = 0.0
    for i in range(a.size):
        d = a[i] - b[i]
        ad = abs(d)
        sign[i] = np.sign(d) * (ad > tie_atol)
        total += ad
    return total


def l1_diff(a, b, tie_atol=0.0):
    a1 = np.ascontiguousarray(a, dtype=np.float64).reshape(-1)
    b1 = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    sign = np.empty_like(a1)
    total = _l1_diff(a1, b1, float(tie_atol), sign)
    return float(total), sign.reshape(np.shape(a))


# exact, order-independent moments need math.fsum, which numba lacks
kl_moments = numpy_impl.kl_moments


@njit(cache=True)
def _kl_grad(x, mean, c, out):
    inv_n = 1.0 / x.size
    for i in range(x.size):
        out[i] = (mean + c * (x[i] - mean)) * inv_n


def kl_grad(x, mean, var, var_active):
    x1 = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    out = np.empty_like(x1)
    _kl_grad(x1, mean, 1.0 - 1.0 / var if var_active else 0.0, out)
    return out.reshape(np.shape(x))


@njit(cache=True)
def _adamw(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    decay = 1.0 - lr * weight_decay
    bc1 = 1.0 - beta1**step
    sqrt_bc2 = np.sqrt(1.0 - beta2**step)
    step_size = lr / bc1
    for i in range(p.size):
        if weight_decay != 0.0:
            p[i] *= decay
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= step_size * m[i] / (np.sqrt(v[i]) / sqrt_bc2 + eps)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    # p, m, v must be contiguous so reshape(-1) is a view and updates land in place
    _adamw(
        p.reshape(-1),
        np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
        m.reshape(-1),
        v.reshape(-1),
        float(step),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps),
        float(weight_decay),
    )


@njit(cache=True)
def _blend(edit, alpha, base, out):
    c, h, w = edit.shape
    for k in range(c):
        for i in range(h):
            for j in range(w):
                a = alpha[i, j]
                out[k, i, j] = edit[k, i, j] * a + base[k, i, j] * (1.0 - a)


def blend(edit, alpha, base):
    out = np.empty(np.shape(edit))
    _blend(
        np.ascontiguousarray(edit, dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(base, dtype=np.float64),
        out,
    )
    return out


@njit(cache=True)
def _blend_vjp(g, edit, alpha, base, g_edit, g_alpha, g_base):
    c, h, w = edit.shape
    for i in range(h):
        for j in range(w):
            a = alpha[i, j]
            acc = 0.0
            for k in range(c):
                gk = g[k, i, j]
                g_edit[k, i, j] = gk * a
                g_base[k, i, j] = gk * (1.0 - a)
                acc += gk * (edit[k, i, j] - base[k, i, j])
            g_alpha[i, j] = acc


def blend_vjp(g, edit, alpha, base):
    shape = np.shape(edit)
    g_edit = np.empty(shape)
    g_base = np.empty(shape)
    g_alpha = np.empty(shape[1:])
    _blend_vjp(
        np.ascontiguousarray(g, dtype=np.float64),
        np.ascontiguousarray(edit, dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(base, dtype=np.float64),
        g_edit,
        g_alpha,
        g_base,
    )
    return g_edit, g_alpha, g_base


@njit(cache=True)
def _im2col(xp, k, h, wd, cols):
    ci = xp.shape[0]
    r = 0
    for c in range(ci):
        for ky in range(k):
            for kx in range(k):
                for i in range(h):
                    src = xp[c, i + ky]
                    base = i * wd
                    for j in range(wd):
                        cols[r, base + j] = src[j + kx]
                r += 1


@njit(cache=True)
def _col2im(gcols, k, h, wd, gxp):
    ci = gxp.shape[0]
    r = 0
    for c in range(ci):
        for ky in range(k):
            for kx in range(k):
                for i in range(h):
                    dst = gxp[c, i + ky]
                    base = i * wd
                    for j in range(wd):
                        dst[j + kx] += gcols[r, base + j]
                r += 1


def _padded(x, p):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def _cols(x, k):
    ci, h, wd = x.shape
    if k == 1:
        return np.ascontiguousarray(x, dtype=np.float64).reshape(ci, h * wd)
    cols = np.empty((ci * k * k, h * wd))
    _im2col(_padded(x, k // 2), k, h, wd, cols)
    return cols


def conv2d(x, w, b):
    """Same-padded stride-1 cross-correlation. x: (Ci,H,W), w: (Co,Ci,K,K)."""
    co, k = w.shape[0], w.shape[-1]
    _, h, wd = x.shape
    out = np.asarray(w, dtype=np.float64).reshape(co, -1) @ _cols(x, k)
    out += np.asarray(b, dtype=np.float64)[:, None]
    return out.reshape(co, h, wd)


def conv2d_vjp(x, w, gy):
    co, ci, k, _ = w.shape
    _, h, wd = x.shape
    gy2 = np.ascontiguousarray(gy, dtype=np.float64).reshape(co, h * wd)
    w2 = np.asarray(w, dtype=np.float64).reshape(co, -1)
    gw = (gy2 @ _cols(x, k).T).reshape(w.shape)
    gb = gy2.sum(axis=1)
    gcols = w2.T @ gy2
    if k == 1:
        return gcols.reshape(ci, h, wd), gw, gb
    p = k // 2
    gxp = np.zeros((ci, h + 2 * p, wd + 2 * p))
    _col2im(gcols, k, h, wd, gxp)
    return np.ascontiguousarray(gxp[:, p : p + h, p : p + wd]), gw, gb


@njit(cache=True)
def _block_sum(g, f, out):
    c, h, w = g.shape
    for k in range(c):
        for i in range(h):
            oi = i // f
            for j in range(w):
                out[k, oi, j // f] += g[k, i, j]


def block_sum(g, f):
    """Sum over non-overlapping f x f blocks of a (C, H, W) array."""
    c, h, w = g.shape
    out = np.zeros((c, h // f, w // f))
    _block_sum(np.ascontiguousarray(g, dtype=np.float64), int(f), out)
    return out
