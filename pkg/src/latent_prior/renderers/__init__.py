from .base import Renderer, blend, mask_loss, mask_loss_grad
from .generator import count_parameters, generator_backward, generator_forward, init_generator
from .latent_map import DEFAULT_LATENT_SHAPE, LatentMapRenderer, init_latent_map
from .layered import LayeredEditRenderer, LayeredEditState, init_layered, layered_forward

__all__ = [
    "DEFAULT_LATENT_SHAPE",
    "LatentMapRenderer",
    "LayeredEditRenderer",
    "LayeredEditState",
    "Renderer",
    "blend",
    "count_parameters",
    "generator_backward",
    "generator_forward",
    "init_generator",
    "init_latent_map",
    "init_layered",
    "layered_forward",
    "mask_loss",
    "mask_loss_grad",
]
