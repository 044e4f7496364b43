"""Adapter around a pretrained Stable Diffusion checkpoint (optional extra).

Needs ``torch``, ``diffusers`` and ``transformers``; none of them is
imported until :func:`load_real_backend` is called. The checkpoint directory
is expected in the diffusers layout (``vae/``, ``unet/``, ``tokenizer/``,
``text_encoder/`` subfolders). Arrays cross the boundary as float64 numpy;
compute runs in float32 on the configured device.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, LoadError
from ..schedule import NoiseSchedule, build_linear_schedule
from .base import BackendBundle

SUPPORTED_VERSIONS = ("1.4", "1.5")
WEIGHTS_ENV = "LATENT_PRIOR_WEIGHTS"
DEFAULT_TAPS = ("up_blocks.0", "up_blocks.1", "up_blocks.2")


def resolve_weights_path(weights_path: str | os.PathLike | None) -> Path | None:
    if weights_path:
        return Path(weights_path)
    env = os.environ.get(WEIGHTS_ENV)
    return Path(env) if env else None


class _TorchDenoiser:
    def __init__(self, unet, device):
        self.unet = unet
        self.device = device

    def predict_noise(self, z_t, t, embedding):
        import torch

        with torch.no_grad():
            z = torch.as_tensor(np.asarray(z_t), dtype=torch.float32, device=self.device)[None]
            out = self.unet(z, int(t), encoder_hidden_states=embedding).sample[0]
        return out.double().cpu().numpy()


class _TorchDecoder:
    def __init__(self, vae, device, taps: Sequence[str]):
        self.vae = vae
        self.device = device
        self.scale = float(vae.config.scaling_factor)
        self.upsample = 2 ** (len(vae.config.block_out_channels) - 1)
        self.level_names = tuple(taps)
        self._captured: dict[str, object] = {}
        modules = dict(vae.decoder.named_modules())
        for name in taps:
            if name not in modules:
                raise ConfigError(f"decoder has no module named {name!r}")
            modules[name].register_forward_hook(self._hook(name))

    def _hook(self, name):
        def fn(_module, _inp, out):
            self._captured[name] = out

        return fn

    def _tensor(self, v, requires_grad=False):
        import torch

        t = torch.as_tensor(np.asarray(v), dtype=torch.float32, device=self.device)[None]
        return t.requires_grad_(requires_grad)

    def _run(self, z):
        self._captured.clear()
        return self.vae.decode(z / self.scale).sample

    def decode(self, v):
        import torch

        with torch.no_grad():
            x = self._run(self._tensor(v))
        return (x[0] / 2 + 0.5).clamp(0, 1).double().cpu().numpy()

    def decode_features(self, v, levels=None):
        import torch

        names = self.level_names if levels is None else tuple(levels)
        with torch.no_grad():
            self._run(self._tensor(v))
            return [self._captured[n][0].double().cpu().numpy() for n in names]

    def features_vjp(self, v, levels, cotangents):
        import torch

        names = self.level_names if levels is None else tuple(levels)
        z = self._tensor(v, requires_grad=True)
        with torch.enable_grad():
            self._run(z)
            outs = [self._captured[n] for n in names]
            grads = [torch.as_tensor(np.asarray(c), dtype=o.dtype, device=o.device)[None] for c, o in zip(cotangents, outs)]
            (g,) = torch.autograd.grad(outs, z, grad_outputs=grads)
        return g[0].double().cpu().numpy()


class _TorchEncoder:
    def __init__(self, vae, device, downsample):
        self.vae = vae
        self.device = device
        self.scale = float(vae.config.scaling_factor)
        self.downsample = downsample

    def _forward(self, x):
        return self.vae.encode(2.0 * x - 1.0).latent_dist.mean * self.scale

    def encode(self, image):
        import torch

        with torch.no_grad():
            x = torch.as_tensor(np.asarray(image), dtype=torch.float32, device=self.device)[None]
            return self._forward(x)[0].double().cpu().numpy()

    def encode_vjp(self, image, cotangent):
        import torch

        x = torch.as_tensor(np.asarray(image), dtype=torch.float32, device=self.device)[None]
        x.requires_grad_(True)
        with torch.enable_grad():
            out = self._forward(x)
            g = torch.as_tensor(np.asarray(cotangent), dtype=out.dtype, device=out.device)[None]
            (gx,) = torch.autograd.grad(out, x, grad_outputs=g)
        return gx[0].double().cpu().numpy()


def load_real_backend(
    weights_path: str | os.PathLike | None,
    device: str = "cpu",
    version: str = "1.5",
    schedule: NoiseSchedule | None = None,
    taps: Sequence[str] = DEFAULT_TAPS,
) -> BackendBundle:
    """Wrap a pretrained Stable Diffusion checkpoint as a :class:`BackendBundle`.

    Args:
        weights_path: checkpoint directory; falls back to ``$LATENT_PRIOR_WEIGHTS``.
        device: torch device string.
        version: declared model version, one of ``SUPPORTED_VERSIONS``.
        schedule: forward-process schedule; the model family default if omitted.
        taps: decoder module names whose outputs serve as feature levels.

    Raises:
        ConfigError: unsupported version or unknown tap name.
        LoadError: missing path, missing optional dependencies, or corrupt weights.
    """
    if str(version) not in SUPPORTED_VERSIONS:
        raise ConfigError(f"unsupported model version {version!r}; expected one of {SUPPORTED_VERSIONS}")
    path = resolve_weights_path(weights_path)
    if path is None:
        raise LoadError(f"no weights path given and ${WEIGHTS_ENV} is unset")
    if not path.exists():
        raise LoadError(f"pretrained weights not found at {path}")
    try:
        import torch
        from diffusers import AutoencoderKL, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer
    except ImportError as exc:
        raise LoadError(
            f"loading weights from {path} needs torch, diffusers and transformers: {exc}"
        ) from exc
    try:
        vae = AutoencoderKL.from_pretrained(path, subfolder="vae").to(device).eval()
        unet = UNet2DConditionModel.from_pretrained(path, subfolder="unet").to(device).eval()
        tokenizer = CLIPTokenizer.from_pretrained(path, subfolder="tokenizer")
        text_encoder = CLIPTextModel.from_pretrained(path, subfolder="text_encoder").to(device).eval()
    except Exception as exc:
        raise LoadError(f"could not load weights from {path}: {exc}") from exc
    for module in (vae, unet, text_encoder):
        module.requires_grad_(False)

    def embed(prompt: str):
        tokens = tokenizer(
            [prompt],
            padding="max_length",
            max_length=tokenizer.model_max_length,
            truncation=True,
            return_tensors="pt",
        )
        with torch.no_grad():
            return text_encoder(tokens.input_ids.to(device))[0]

    decoder = _TorchDecoder(vae, device, taps)
    encoder = _TorchEncoder(vae, device, decoder.upsample)
    return BackendBundle(
        name="pretrained",
        denoiser=_TorchDenoiser(unet, device),
        decoder=decoder,
        encoder=encoder,
        schedule=schedule or build_linear_schedule(),
        embed=embed,
    )
