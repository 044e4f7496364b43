"""Analytic stand-ins for a latent diffusion model.

The point-mass denoiser is the exact optimal noise predictor for a data
distribution concentrated on one latent, so score distillation against it
has a known fixed point. The decoder and encoder are fixed linear maps,
which makes every feature-space gradient checkable by finite differences.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import ConfigError, DegenerateTimestepError
from ..schedule import NoiseSchedule
from .base import BackendBundle

MOCK_KINDS = ("mock-pointmass", "mock-linear")


class MockPointMassDenoiser:
    """Optimal noise predictor for data concentrated at ``target``.

    ``predict_noise(z_t, t) = (z_t - alpha_t * target) / sigma_t``. If
    ``null_target`` is given, the unconditional embedding (empty prompt)
    pulls toward it instead, which gives guidance something to act on.
    """

    def __init__(self, target: np.ndarray, schedule: NoiseSchedule, null_target: np.ndarray | None = None):
        self.target = np.asarray(target, dtype=np.float64)
        self.null_target = None if null_target is None else np.asarray(null_target, dtype=np.float64)
        self.schedule = schedule

    def _target_for(self, embedding) -> np.ndarray:
        if self.null_target is not None and embedding == "":
            return self.null_target
        return self.target

    def predict_noise(self, z_t, t, embedding=None):
        a, s = self.schedule.coefficients(t)
        if s == 0.0:
            raise DegenerateTimestepError(f"sigma_t is zero at t={t}")
        mu = self._target_for(embedding)
        if np.shape(z_t) != mu.shape:
            raise ValueError(f"latent shape {np.shape(z_t)} does not match mock target {mu.shape}")
        return (np.asarray(z_t) - a * mu) / s


class MockGaussianDenoiser(MockPointMassDenoiser):
    """Optimal noise predictor for an isotropic Gaussian prior N(target, prior_std^2).

    ``eps_hat = sigma_t (z_t - alpha_t target) / (alpha_t^2 prior_std^2 + sigma_t^2)``,
    linear in ``z_t``. With ``prior_std = 0`` it reduces to the point mass.
    """

    def __init__(self, target, schedule, prior_std: float = 0.5, null_target=None):
        super().__init__(target, schedule, null_target)
        if prior_std < 0:
            raise ConfigError("prior_std must be >= 0")
        self.prior_std = float(prior_std)

    def predict_noise(self, z_t, t, embedding=None):
        a, s = self.schedule.coefficients(t)
        denom = a * a * self.prior_std**2 + s * s
        if denom == 0.0:
            raise DegenerateTimestepError(f"degenerate Gaussian posterior at t={t}")
        mu = self._target_for(embedding)
        return s * (np.asarray(z_t) - a * mu) / denom


def _mix(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return (a @ x.reshape(c, h * w)).reshape(a.shape[0], h, w)


def _up(x: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return x
    c, h, w = x.shape
    return np.broadcast_to(x[:, :, None, :, None], (c, h, f, w, f)).reshape(c, h * f, w * f)


def _up_t(g: np.ndarray, f: int) -> np.ndarray:
    """Adjoint of nearest-neighbour upsampling: sum over each f x f block."""
    if f == 1:
        return g
    return kernels.block_sum(g, f)


class MockLinearDecoder:
    """Chain of seeded per-pixel channel mixes with nearest upsampling.

    Level ``k`` computes ``mixes[k] @ up(level_{k-1}, factors[k])``; the input
    of level 0 is the latent itself. With the defaults the three levels sit at
    1x, 2x and 4x the latent grid. ``decode`` maps the last level to RGB and
    upsamples to ``upsample`` (8) times the latent grid.
    """

    def __init__(
        self,
        seed: int = 0,
        latent_channels: int = 4,
        widths: Sequence[int] = (8, 8, 8),
        mixes: Sequence[np.ndarray] | None = None,
        factors: Sequence[int] | None = None,
        upsample: int = 8,
    ):
        rng = np.random.default_rng(seed)
        if mixes is None:
            mixes = []
            fan_in = latent_channels
            for w in widths:
                mixes.append(rng.standard_normal((w, fan_in)) / np.sqrt(fan_in))
                fan_in = w
        self.mixes = [np.array(m, dtype=np.float64) for m in mixes]
        if factors is None:
            factors = [1] + [2] * (len(self.mixes) - 1)
        self.factors = [int(f) for f in factors]
        if len(self.factors) != len(self.mixes):
            raise ConfigError("need one upsampling factor per level")
        total = int(np.prod(self.factors))
        if upsample % total:
            raise ConfigError(f"upsample {upsample} not divisible by level factors {self.factors}")
        self.upsample = upsample
        self._scale = [int(np.prod(self.factors[: k + 1])) for k in range(len(self.factors))]
        last = self.mixes[-1].shape[0]
        self.rgb = rng.standard_normal((3, last)) / np.sqrt(last)
        self.level_names = tuple(f"up{k}" for k in range(len(self.mixes)))
        self.latent_channels = self.mixes[0].shape[1]

    def _indices(self, levels) -> list[int]:
        if levels is None:
            return list(range(len(self.mixes)))
        out = []
        for name in levels:
            if name not in self.level_names:
                raise ConfigError(f"unknown decoder level {name!r}; have {self.level_names}")
            out.append(self.level_names.index(name))
        return out

    def _low_res(self, v, depth):
        # per-pixel mixes commute with nearest upsampling, so every level is
        # computed on the latent grid and upsampled once at the end
        out, h = [], np.asarray(v, dtype=np.float64)
        for k in range(depth):
            h = _mix(self.mixes[k], h)
            out.append(h)
        return out

    def decode_features(self, v, levels=None):
        idx = self._indices(levels)
        low = self._low_res(v, max(idx) + 1)
        return [_up(low[k], self._scale[k]) for k in idx]

    def features_vjp(self, v, levels, cotangents):
        idx = self._indices(levels)
        if len(idx) != len(cotangents):
            raise ValueError("need one cotangent per requested level")
        pending = {}
        for k, g in zip(idx, cotangents):
            g = _up_t(np.asarray(g, dtype=np.float64), self._scale[k])
            pending[k] = pending[k] + g if k in pending else g
        g = None
        for k in range(max(idx), -1, -1):
            if k in pending:
                g = pending[k] if g is None else g + pending[k]
            if g is not None:
                g = _mix(self.mixes[k].T, g)
        return g

    def rgb_map(self) -> np.ndarray:
        """Per-pixel 3 x C linear map from latent to pre-activation RGB."""
        m = self.rgb
        for a in reversed(self.mixes):
            m = m @ a
        return m

    def decode(self, v):
        h = self._low_res(v, len(self.mixes))[-1]
        rgb = 0.5 + 0.5 * _mix(self.rgb, h)
        return np.clip(_up(rgb, self.upsample), 0.0, 1.0)


class MockTanhDecoder:
    """Elementwise ``tanh`` on top of :class:`MockLinearDecoder` features.

    With a linear decoder ``F(v) - F(v + r) = -F(r)`` does not depend on ``v``,
    so the feature-matching loss is flat in ``v``. The squashing makes it
    curved, which gives finite-difference checks a non-trivial gradient.
    """

    def __init__(self, base: MockLinearDecoder, gain: float = 1.0):
        self.base = base
        self.gain = float(gain)
        self.level_names = base.level_names
        self.upsample = base.upsample

    def decode_features(self, v, levels=None):
        return [np.tanh(self.gain * f) for f in self.base.decode_features(v, levels)]

    def features_vjp(self, v, levels, cotangents):
        feats = self.decode_features(v, levels)
        inner = [self.gain * g * (1.0 - f * f) for g, f in zip(cotangents, feats)]
        return self.base.features_vjp(v, levels, inner)

    def decode(self, v):
        return self.base.decode(v)


class MockLinearEncoder:
    """Block-average then a linear RGB -> latent map that inverts the decoder's colour map.

    ``decode(encode(x))`` reproduces the 8x8 block means of ``x`` wherever the
    decoder's output is not clipped.
    """

    def __init__(self, decoder: MockLinearDecoder):
        self.downsample = decoder.upsample
        self.proj = np.linalg.pinv(decoder.rgb_map())  # (C, 3)

    def encode(self, image):
        image = np.asarray(image, dtype=np.float64)
        c, h, w = image.shape
        f = self.downsample
        if c != 3 or h % f or w % f:
            raise ValueError(f"image shape {image.shape} must be (3, H, W) with H, W divisible by {f}")
        pooled = image.reshape(3, h // f, f, w // f, f).mean(axis=(2, 4))
        return _mix(self.proj, 2.0 * pooled - 1.0)

    def encode_vjp(self, image, cotangent):
        f = self.downsample
        g = 2.0 * _mix(self.proj.T, np.asarray(cotangent, dtype=np.float64))
        return _up(g, f) / (f * f)


def make_target(shape, seed: int = 0, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Seeded latent standardized to exactly the requested empirical mean and std."""
    x = np.random.default_rng(seed).standard_normal(shape)
    x = (x - x.mean()) / x.std()
    return mean + std * x


def build_mock_backend(
    kind: str,
    latent_shape,
    schedule: NoiseSchedule,
    *,
    target_seed: int = 0,
    target_mean: float = 0.0,
    target_std: float = 1.0,
    prior_std: float = 0.5,
    decoder_seed: int = 0,
) -> BackendBundle:
    """Assemble a mock bundle.

    ``mock-pointmass`` uses :class:`MockPointMassDenoiser`; ``mock-linear`` uses
    the linear Gaussian-prior denoiser. Both share the seeded linear decoder
    and its matching encoder.
    """
    target = make_target(latent_shape, target_seed, target_mean, target_std)
    if kind == "mock-pointmass":
        denoiser = MockPointMassDenoiser(target, schedule)
    elif kind == "mock-linear":
        denoiser = MockGaussianDenoiser(target, schedule, prior_std)
    else:
        raise ConfigError(f"unknown mock backend {kind!r}; expected one of {MOCK_KINDS}")
    decoder = MockLinearDecoder(seed=decoder_seed, latent_channels=latent_shape[0])
    encoder = MockLinearEncoder(decoder)
    return BackendBundle(kind, denoiser, decoder, encoder, schedule, embed=lambda prompt: prompt)
