"""Latent score distillation, decoder feature matching and the latent KL term.

All gradients are with respect to the rendered latent ``v``. The score
distillation term never differentiates the denoiser: its gradient is the
weighted noise residual injected directly at ``v``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .backend.base import BackendBundle, Decoder, TextCondition, guided_noise
from .errors import BackendError, ConfigError, DegenerateVarianceError, LatentPriorError
from .schedule import perturb

VAR_FLOOR = 1e-8
# feature differences below this fraction of a level's largest feature are rounding noise
FM_TIE_RTOL = 1e-12


class JacobianMode(str, enum.Enum):
    """How the denoiser Jacobian enters the feature-matching gradient.

    ``IDENTITY_APPROX`` treats d(eps_hat)/d(z_t) as the identity, which puts a
    ``1 + alpha_t`` factor on the perturbed-branch gradient.
    ``STOP_GRADIENT`` treats the residual as a constant.
    """

    IDENTITY_APPROX = "identity-approx"
    STOP_GRADIENT = "stop-gradient"


class FMReduction(str, enum.Enum):
    # per-level L1 sums, averaged over levels, divided by the latent size
    NORMALIZED = "normalized"
    # plain sum over levels and elements
    SUM = "sum"


def constant_weight(t: int) -> float:
    return 1.0


def _check_weight(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be finite and >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PriorWeights:
    """Balancing factors: ``lambda1`` feature matching, ``lambda2`` KL, ``lambda3`` score distillation.

    ``lsd_weight_fn`` maps a timestep to the residual weight w(t).
    """

    lambda1: float = 3.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    lsd_weight_fn: Callable[[int], float] = field(default=constant_weight, compare=False)

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            object.__setattr__(self, name, _check_weight(name, getattr(self, name)))

    @property
    def all_zero(self) -> bool:
        return self.lambda1 == 0.0 and self.lambda2 == 0.0 and self.lambda3 == 0.0


@dataclass
class GradientReport:
    loss_lsd: float
    loss_fm: float
    loss_kl: float
    loss_total: float
    grad_v: np.ndarray
    t_used: int
    grad_lsd: np.ndarray
    grad_fm: np.ndarray
    grad_kl: np.ndarray


def _same_shape(a, b, what: str):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


def lsd_gradient(v, eps_hat, eps, w: float = 1.0) -> np.ndarray:
    """Score-distillation gradient ``w * (eps_hat - eps)`` at ``v``."""
    _same_shape(v, eps_hat, "lsd_gradient")
    _same_shape(eps_hat, eps, "lsd_gradient")
    if w < 0:
        raise ValueError(f"LSD weight must be >= 0, got {w}")
    return w * (np.asarray(eps_hat, dtype=np.float64) - np.asarray(eps, dtype=np.float64))


def kl_loss(v, strict: bool = False, var_floor: float = VAR_FLOOR) -> tuple[float, np.ndarray]:
    """KL-style penalty on the empirical latent statistics and its exact gradient.

    ``0.5 * (mean^2 + var - log(var) + 1)`` with population mean/variance over
    all N elements. The constant is ``+1``, which only shifts the value.
    Below ``var_floor`` the variance is clamped (and the variance term stops
    contributing gradient) unless ``strict`` is set.

    Raises:
        DegenerateVarianceError: variance below the floor in strict mode.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size < 2:
        raise ValueError("kl_loss needs at least two latent elements")
    mean, var = kernels.kl_moments(v)
    active = var >= var_floor
    if not active:
        if strict:
            raise DegenerateVarianceError(f"latent variance {var:.3e} below floor {var_floor:.1e}")
        var = var_floor
    loss = 0.5 * (mean * mean + var - np.log(var) + 1.0)
    return float(loss), kernels.kl_grad(v, mean, var, active)


def _fm_scale(n_levels: int, n_latent: int, reduction) -> float:
    reduction = FMReduction(reduction)
    if reduction is FMReduction.SUM:
        return 1.0
    return 1.0 / (n_levels * n_latent)


def fm_loss(
    v,
    residual,
    decoder: Decoder,
    levels: Sequence[str] | None = None,
    reduction: str = FMReduction.NORMALIZED,
) -> tuple[float, list[np.ndarray]]:
    """L1 feature distance between decoding ``v`` and ``v + residual``.

    Returns the reduced loss and the per-level differences ``F(v) - F(v + residual)``.
    """
    _same_shape(v, residual, "fm_loss")
    v = np.asarray(v, dtype=np.float64)
    if levels is not None and len(levels) == 0:
        raise ValueError("fm_loss needs at least one decoder level")
    clean = decoder.decode_features(v, levels)
    pert = decoder.decode_features(v + residual, levels)
    total, diffs = 0.0, []
    for a, b in zip(clean, pert):
        s, _ = kernels.l1_diff(a, b)
        total += s
        diffs.append(a - b)
    return total * _fm_scale(len(clean), v.size, reduction), diffs


def fm_branch_gradients(
    v,
    residual,
    decoder: Decoder,
    levels: Sequence[str] | None = None,
    reduction: str = FMReduction.NORMALIZED,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus the clean-branch and perturbed-branch gradients.

    ``g_clean`` differentiates through ``F(v)`` with ``F(v')`` frozen;
    ``g_pert`` differentiates through ``F(v')`` (w.r.t. ``v'``) with ``F(v)``
    frozen. The L1 subgradient at a tie is 0; differences within
    ``FM_TIE_RTOL`` times the level's largest feature count as ties, so a residual
    that is zero up to rounding gives a zero gradient.
    """
    _same_shape(v, residual, "fm_branch_gradients")
    v = np.asarray(v, dtype=np.float64)
    if levels is not None and len(levels) == 0:
        raise ValueError("fm needs at least one decoder level")
    v_pert = v + residual
    clean = decoder.decode_features(v, levels)
    pert = decoder.decode_features(v_pert, levels)
    scale = _fm_scale(len(clean), v.size, reduction)
    total, signs = 0.0, []
    for a, b in zip(clean, pert):
        tie = FM_TIE_RTOL * max(np.max(np.abs(a)), np.max(np.abs(b)))
        s, sign = kernels.l1_diff(a, b, tie)
        total += s
        signs.append(sign * scale)
    g_clean = decoder.features_vjp(v, levels, signs)
    # a VJP is linear in its cotangent, so negating the result is exact
    g_pert = -decoder.features_vjp(v_pert, levels, signs)
    return total * scale, g_clean, g_pert


def fm_gradient(
    v,
    residual,
    decoder: Decoder,
    levels: Sequence[str] | None = None,
    mode: JacobianMode = JacobianMode.IDENTITY_APPROX,
    alpha_t: float = 0.0,
    reduction: str = FMReduction.NORMALIZED,
) -> np.ndarray:
    """Feature-matching gradient at ``v``.

    ``IDENTITY_APPROX``: ``(1 + alpha_t) * g_pert + g_clean``.
    ``STOP_GRADIENT``: ``g_pert + g_clean``.
    """
    _, g_clean, g_pert = fm_branch_gradients(v, residual, decoder, levels, reduction)
    return _combine_fm(g_clean, g_pert, JacobianMode(mode), alpha_t)


def _combine_fm(g_clean, g_pert, mode: JacobianMode, alpha_t: float) -> np.ndarray:
    if mode is JacobianMode.IDENTITY_APPROX:
        return (1.0 + alpha_t) * g_pert + g_clean
    return g_pert + g_clean


def combined_step(
    v,
    t: int,
    eps,
    backend: BackendBundle,
    weights: PriorWeights,
    mode: JacobianMode = JacobianMode.IDENTITY_APPROX,
    cond: TextCondition | None = None,
    guidance_scale: float = 7.5,
    *,
    levels: Sequence[str] | None = None,
    fm_reduction: str = FMReduction.NORMALIZED,
    kl_strict: bool = False,
) -> GradientReport:
    """One evaluation of the full prior at timestep ``t`` with noise ``eps``.

    Perturbs ``v``, queries the guided denoiser once, and assembles
    ``lambda1 * grad_fm + lambda2 * grad_kl + lambda3 * grad_lsd``.
    ``loss_lsd`` is ``0.5 * ||eps_hat - eps||^2`` for logging only.
    """
    v = np.asarray(v, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    mode = JacobianMode(mode)
    schedule = backend.schedule
    alpha_t, _ = schedule.coefficients(t)
    if cond is None:
        cond = backend.condition("")

    z_t = perturb(v, eps, t, schedule)
    eps_hat = guided_noise(backend.denoiser, z_t, t, cond, guidance_scale)
    residual = eps_hat - eps

    w = _check_weight("w(t)", weights.lsd_weight_fn(t))
    grad_lsd = lsd_gradient(v, eps_hat, eps, w)
    loss_lsd = 0.5 * float(np.sum(residual * residual))

    try:
        loss_fm, g_clean, g_pert = fm_branch_gradients(v, residual, backend.decoder, levels, fm_reduction)
    except (LatentPriorError, ValueError):
        raise
    except Exception as exc:
        raise BackendError(f"decoder call failed in feature matching: {exc}") from exc
    grad_fm = _combine_fm(g_clean, g_pert, mode, alpha_t)

    loss_kl, grad_kl = kl_loss(v, strict=kl_strict)

    grad_v = weights.lambda1 * grad_fm + weights.lambda2 * grad_kl + weights.lambda3 * grad_lsd
    total = weights.lambda1 * loss_fm + weights.lambda2 * loss_kl + weights.lambda3 * loss_lsd
    return GradientReport(
        loss_lsd=loss_lsd,
        loss_fm=loss_fm,
        loss_kl=loss_kl,
        loss_total=total,
        grad_v=grad_v,
        t_used=int(t),
        grad_lsd=grad_lsd,
        grad_fm=grad_fm,
        grad_kl=grad_kl,
    )
