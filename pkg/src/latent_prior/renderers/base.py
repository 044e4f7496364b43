"""Renderer abstraction and the compositing helpers shared by renderers."""

from __future__ import annotations

import numpy as np

from .. import kernels


class Renderer:
    """A differentiable map from named parameters to a latent code.

    Subclasses fill ``params`` and implement ``render`` and ``backward``.
    ``render`` must be a pure function of ``params`` (and fixed context);
    ``backward`` pulls a latent gradient back to every parameter and adds the
    gradients of the renderer's own extra losses, as of the last ``render``.
    """

    kind = "abstract"
    params: dict[str, np.ndarray]

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_v: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def extra_losses(self) -> dict[str, tuple[float, float]]:
        """``name -> (weight, value)`` for losses owned by the renderer."""
        return {}

    def images(self, decoder) -> dict[str, np.ndarray]:
        """Named (C, H, W) rasters in [0, 1] to save at the end of a run."""
        return {}

    def apply_update(self, grads: dict[str, np.ndarray], optimizer) -> None:
        optimizer.step(self.params, grads)


def blend(edit, alpha, base, strict: bool = True) -> np.ndarray:
    """Alpha compositing ``edit * alpha + base * (1 - alpha)``.

    ``alpha`` broadcasts against the images; a (H, W) alpha with (C, H, W)
    images takes the compiled path. Out-of-range alpha raises in strict mode
    and is clamped otherwise.
    """
    edit = np.asarray(edit, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if edit.shape != base.shape:
        raise ValueError(f"edit {edit.shape} and base {base.shape} shapes differ")
    if np.any(alpha < 0.0) or np.any(alpha > 1.0):
        if strict:
            raise ValueError("alpha must lie in [0, 1]")
        alpha = np.clip(alpha, 0.0, 1.0)
    if edit.ndim == 3 and alpha.shape == edit.shape[1:]:
        return kernels.blend(edit, alpha, base)
    return edit * alpha + base * (1.0 - alpha)


def _check_mask_reduction(reduction: str) -> str:
    if reduction not in ("mean", "sum"):
        raise ValueError(f"mask reduction must be 'mean' or 'sum', got {reduction!r}")
    return reduction


def mask_loss(alpha, mask, reduction: str = "mean") -> float:
    """L1 distance between the alpha map and a target mask (mean over pixels by default)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if alpha.shape != mask.shape:
        raise ValueError(f"alpha {alpha.shape} and mask {mask.shape} shapes differ")
    total, _ = kernels.l1_diff(alpha, mask)
    return total / alpha.size if _check_mask_reduction(reduction) == "mean" else total


def mask_loss_grad(alpha, mask, reduction: str = "mean") -> np.ndarray:
    _, sign = kernels.l1_diff(np.asarray(alpha, dtype=np.float64), np.asarray(mask, dtype=np.float64))
    return sign / sign.size if _check_mask_reduction(reduction) == "mean" else sign
