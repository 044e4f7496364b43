"""Interfaces of a latent diffusion model as seen by the prior losses."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from ..errors import BackendError
from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class TextCondition:
    """Prompt plus the embedding handles a denoiser is evaluated with."""

    prompt: str
    embedding_handle: Any
    null_handle: Any
    owner: int = 0


class Denoiser(Protocol):
    def predict_noise(self, z_t: np.ndarray, t: int, embedding: Any) -> np.ndarray:
        """Noise prediction under a single embedding (no guidance)."""
        ...


class Decoder(Protocol):
    level_names: tuple[str, ...]
    upsample: int

    def decode(self, v: np.ndarray) -> np.ndarray: ...

    def decode_features(self, v: np.ndarray, levels: Sequence[str] | None = None) -> list[np.ndarray]:
        """Feature maps at ``levels``, deepest (coarsest) first."""
        ...

    def features_vjp(
        self, v: np.ndarray, levels: Sequence[str] | None, cotangents: Sequence[np.ndarray]
    ) -> np.ndarray:
        """Pull per-level feature cotangents back to the decoder input ``v``."""
        ...


class Encoder(Protocol):
    downsample: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def encode_vjp(self, image: np.ndarray, cotangent: np.ndarray) -> np.ndarray: ...


@dataclass
class BackendBundle:
    """Denoiser, decoder, encoder and schedule of one latent diffusion model.

    ``embed`` maps a prompt to an opaque embedding handle; the empty string
    gives the unconditional handle. Embeddings are cached per prompt.
    """

    name: str
    denoiser: Denoiser
    decoder: Decoder
    encoder: Encoder
    schedule: NoiseSchedule
    embed: Callable[[str], Any]
    _cache: dict = field(default_factory=dict, repr=False)

    def condition(self, prompt: str) -> TextCondition:
        if prompt not in self._cache:
            if "" not in self._cache:
                self._cache[""] = self.embed("")
            self._cache[prompt] = self.embed(prompt)
        return TextCondition(prompt, self._cache[prompt], self._cache[""], owner=id(self))


def _call(denoiser: Denoiser, z_t, t, embedding, branch: str) -> np.ndarray:
    try:
        out = denoiser.predict_noise(z_t, t, embedding)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"denoiser call failed ({branch} branch, t={t}): {exc}") from exc
    out = np.asarray(out)
    if out.shape != np.shape(z_t):
        raise BackendError(
            f"denoiser ({branch} branch) returned shape {out.shape}, expected {np.shape(z_t)}"
        )
    return out


def guided_noise(
    denoiser: Denoiser, z_t: np.ndarray, t: int, cond: TextCondition, guidance_scale: float
) -> np.ndarray:
    """Classifier-free guided noise prediction.

    ``eps_uncond + s * (eps_cond - eps_uncond)``, from one conditional and one
    unconditional denoiser evaluation.
    """
    if guidance_scale < 0:
        raise ValueError(f"guidance scale must be >= 0, got {guidance_scale}")
    eps_cond = _call(denoiser, z_t, t, cond.embedding_handle, "conditional")
    eps_uncond = _call(denoiser, z_t, t, cond.null_handle, "unconditional")
    return eps_uncond + guidance_scale * (eps_cond - eps_uncond)
