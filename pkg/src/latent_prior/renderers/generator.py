"""Compact encoder-decoder CNN that emits an RGB edit layer and an alpha map.

Layout for base width ``c`` on an input of size H x W (H, W divisible by 4)::

    enc1  conv3x3  3   -> c    relu            H
    enc2  conv3x3  c   -> 2c   relu  (pool 2)  H/2
    mid   conv3x3  2c  -> 2c   relu  (pool 2)  H/4
    dec2  conv3x3  4c  -> c    relu  (up 2, concat enc2)  H/2
    dec1  conv3x3  2c  -> c    relu  (up 2, concat enc1)  H
    rgb   conv1x1  c   -> 3    sigmoid
    alpha conv1x1  c   -> 1    sigmoid

Pooling is 2x2 average, upsampling is nearest. Backprop is written by hand.
"""

from __future__ import annotations

import numpy as np

from .. import kernels

_LAYERS = ("enc1", "enc2", "mid", "dec2", "dec1", "rgb", "alpha")


def _shapes(c: int) -> dict[str, tuple[int, int, int]]:
    return {
        "enc1": (c, 3, 3),
        "enc2": (2 * c, c, 3),
        "mid": (2 * c, 2 * c, 3),
        "dec2": (c, 4 * c, 3),
        "dec1": (c, 2 * c, 3),
        "rgb": (3, c, 1),
        "alpha": (1, c, 1),
    }


def init_generator(rng: np.random.Generator, base_channels: int = 16) -> dict[str, np.ndarray]:
    """He-initialised weights, zero biases (so both heads start at 0.5)."""
    params = {}
    for name, (co, ci, k) in _shapes(base_channels).items():
        std = np.sqrt(2.0 / (ci * k * k))
        params[f"{name}.w"] = rng.standard_normal((co, ci, k, k)) * std
        params[f"{name}.b"] = np.zeros(co)
    return params


def count_parameters(params: dict[str, np.ndarray]) -> int:
    return int(sum(p.size for k, p in params.items() if k.split(".")[0] in _LAYERS))


def _pool(x):
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _pool_t(g):
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0


def _up(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _up_t(g):
    c, h, w = g.shape
    return g.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _conv(params, name, x):
    return kernels.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])


def generator_forward(params: dict[str, np.ndarray], image: np.ndarray):
    """Run the generator on a (3, H, W) image.

    Returns ``(edit, alpha, cache)``: edit is (3, H, W), alpha is (H, W), both in (0, 1).
    """
    x = np.asarray(image, dtype=np.float64)
    if x.shape[0] != 3 or x.shape[1] % 4 or x.shape[2] % 4:
        raise ValueError(f"generator input must be (3, H, W) with H, W divisible by 4, got {x.shape}")
    cache = {"x": x}
    e1 = np.maximum(_conv(params, "enc1", x), 0.0)
    p1 = _pool(e1)
    e2 = np.maximum(_conv(params, "enc2", p1), 0.0)
    p2 = _pool(e2)
    m = np.maximum(_conv(params, "mid", p2), 0.0)
    c2 = np.concatenate([_up(m), e2])
    d2 = np.maximum(_conv(params, "dec2", c2), 0.0)
    c1 = np.concatenate([_up(d2), e1])
    d1 = np.maximum(_conv(params, "dec1", c1), 0.0)
    edit = _sigmoid(_conv(params, "rgb", d1))
    alpha = _sigmoid(_conv(params, "alpha", d1))[0]
    cache.update(e1=e1, p1=p1, e2=e2, p2=p2, m=m, c2=c2, d2=d2, c1=c1, d1=d1, edit=edit, alpha=alpha)
    return edit, alpha, cache


def generator_backward(params, cache, g_edit, g_alpha) -> dict[str, np.ndarray]:
    """Gradients of a scalar w.r.t. every generator parameter, given d/d(edit) and d/d(alpha)."""
    grads: dict[str, np.ndarray] = {}

    def conv_back(name, inp, gy):
        gx, gw, gb = kernels.conv2d_vjp(inp, params[f"{name}.w"], gy)
        grads[f"{name}.w"] = gw
        grads[f"{name}.b"] = gb
        return gx

    edit, alpha = cache["edit"], cache["alpha"]
    gz_rgb = np.asarray(g_edit) * edit * (1.0 - edit)
    gz_alpha = (np.asarray(g_alpha) * alpha * (1.0 - alpha))[None]
    c = params["enc1.w"].shape[0]
    d1 = cache["d1"]
    g_d1 = conv_back("rgb", d1, gz_rgb) + conv_back("alpha", d1, gz_alpha)
    g_d1 = g_d1 * (d1 > 0)
    g_c1 = conv_back("dec1", cache["c1"], g_d1)
    g_d2 = _up_t(g_c1[:c]) * (cache["d2"] > 0)
    g_e1 = g_c1[c:]
    g_c2 = conv_back("dec2", cache["c2"], g_d2)
    g_m = _up_t(g_c2[: 2 * c]) * (cache["m"] > 0)
    g_e2 = g_c2[2 * c :]
    g_e2 = g_e2 + _pool_t(conv_back("mid", cache["p2"], g_m))
    g_e2 = g_e2 * (cache["e2"] > 0)
    g_e1 = g_e1 + _pool_t(conv_back("enc2", cache["p1"], g_e2))
    g_e1 = g_e1 * (cache["e1"] > 0)
    conv_back("enc1", cache["x"], g_e1)
    return grads
