from __future__ import annotations

import numpy as np

from .base import Renderer

DEFAULT_LATENT_SHAPE = (4, 64, 64)


class LatentMapRenderer(Renderer):
    """The latent itself is the parameter: ``render() == params["latent"]``."""

    kind = "latent-map"

    def __init__(self, latent: np.ndarray):
        self.params = {"latent": np.array(latent, dtype=np.float64, order="C")}

    def render(self) -> np.ndarray:
        return self.params["latent"].copy()

    def backward(self, grad_v):
        return {"latent": np.array(grad_v, dtype=np.float64)}

    def images(self, decoder):
        return {"image": decoder.decode(self.params["latent"])}


def init_latent_map(rng: np.random.Generator, shape=DEFAULT_LATENT_SHAPE) -> LatentMapRenderer:
    """Standard-normal latent map, reproducible from the generator state."""
    return LatentMapRenderer(rng.standard_normal(tuple(shape)))
