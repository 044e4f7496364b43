"""Layered image editing: CNN edit layer + alpha, encoded, plus a residual latent.

Forward pass::

    edit, alpha = generator(theta_cnn, I)
    I'   = blend(edit, alpha, I)
    v'   = encode(I')
    v''  = v' + theta_latent
    I''  = blend(decode(v''), alpha, I)

The prior acts on ``v''``; the mask term ``||alpha - M||_1`` acts on alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .base import Renderer, blend, mask_loss, mask_loss_grad
from .generator import generator_backward, generator_forward, init_generator

_CNN = "cnn."


@dataclass
class LayeredEditState:
    theta_cnn: dict[str, np.ndarray]
    theta_latent: np.ndarray
    image: np.ndarray  # (3, H, W) in [0, 1]
    mask: np.ndarray  # (H, W) in [0, 1]

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"input image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ValueError(f"mask {self.mask.shape} and image {self.image.shape[1:]} sizes differ")


def _forward(state: LayeredEditState, encoder):
    edit, alpha, cache = generator_forward(state.theta_cnn, state.image)
    initial = blend(edit, alpha, state.image)
    v_init = encoder.encode(initial)
    v = v_init + state.theta_latent
    return v, edit, alpha, initial, cache


def layered_forward(state: LayeredEditState, encoder, decoder):
    """Return ``(v'', I'', alpha)`` for the current state (pure)."""
    v, _, alpha, _, _ = _forward(state, encoder)
    final = blend(decoder.decode(v), alpha, state.image)
    return v, final, alpha


class LayeredEditRenderer(Renderer):
    """Trainable generator weights (``cnn.*``) and residual latent (``latent_residual``).

    ``stop_grad_encoder`` cuts the latent gradient at the encoder so the
    generator only learns from the mask term.
    """

    kind = "layered"

    def __init__(
        self,
        state: LayeredEditState,
        encoder,
        decoder,
        mask_weight: float = 1.0,
        mask_reduction: str = "mean",
        stop_grad_encoder: bool = False,
    ):
        self.state = state
        self.encoder = encoder
        self.decoder = decoder
        self.mask_weight = float(mask_weight)
        self.mask_reduction = mask_reduction
        self.stop_grad_encoder = bool(stop_grad_encoder)
        # share storage with the state so in-place optimizer updates reach it
        self.params = {_CNN + k: v for k, v in state.theta_cnn.items()}
        self.params["latent_residual"] = state.theta_latent
        self._last = None

    def render(self):
        v, edit, alpha, initial, cache = _forward(self.state, self.encoder)
        self._last = (edit, alpha, initial, cache)
        return v

    def extra_losses(self):
        if self._last is None:
            self.render()
        alpha = self._last[1]
        return {"mask": (self.mask_weight, mask_loss(alpha, self.state.mask, self.mask_reduction))}

    def backward(self, grad_v):
        if self._last is None:
            raise RuntimeError("backward called before render")
        edit, alpha, initial, cache = self._last
        grad_v = np.asarray(grad_v, dtype=np.float64)
        if self.stop_grad_encoder:
            g_initial = np.zeros_like(initial)
        else:
            g_initial = self.encoder.encode_vjp(initial, grad_v)
        g_edit, g_alpha, _ = kernels.blend_vjp(g_initial, edit, alpha, self.state.image)
        if self.mask_weight:
            g_alpha = g_alpha + self.mask_weight * mask_loss_grad(alpha, self.state.mask, self.mask_reduction)
        grads = {_CNN + k: g for k, g in generator_backward(self.state.theta_cnn, cache, g_edit, g_alpha).items()}
        grads["latent_residual"] = grad_v.copy()
        return grads

    def images(self, decoder):
        v, final, alpha = layered_forward(self.state, self.encoder, decoder)
        edit = self._last[0] if self._last is not None else generator_forward(self.state.theta_cnn, self.state.image)[0]
        return {"edited": final, "alpha": alpha[None], "edit_layer": edit}


def init_layered(
    rng: np.random.Generator,
    image: np.ndarray,
    mask: np.ndarray,
    encoder,
    decoder,
    base_channels: int = 16,
    **kwargs,
) -> LayeredEditRenderer:
    """Fresh generator weights and a zero residual latent sized for ``image``."""
    f = encoder.downsample
    _, h, w = image.shape
    latent_channels = getattr(decoder, "latent_channels", 4)
    state = LayeredEditState(
        theta_cnn=init_generator(rng, base_channels),
        theta_latent=np.zeros((latent_channels, h // f, w // f)),
        image=np.asarray(image, dtype=np.float64),
        mask=np.asarray(mask, dtype=np.float64),
    )
    return LayeredEditRenderer(state, encoder, decoder, **kwargs)
