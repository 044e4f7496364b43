from .base import BackendBundle, Decoder, Denoiser, Encoder, TextCondition, guided_noise
from .mock import (
    MOCK_KINDS,
    MockGaussianDenoiser,
    MockLinearDecoder,
    MockLinearEncoder,
    MockPointMassDenoiser,
    MockTanhDecoder,
    build_mock_backend,
    make_target,
)
from .pretrained import SUPPORTED_VERSIONS, WEIGHTS_ENV, load_real_backend

__all__ = [
    "BackendBundle",
    "Decoder",
    "Denoiser",
    "Encoder",
    "MOCK_KINDS",
    "MockGaussianDenoiser",
    "MockLinearDecoder",
    "MockLinearEncoder",
    "MockPointMassDenoiser",
    "MockTanhDecoder",
    "SUPPORTED_VERSIONS",
    "TextCondition",
    "WEIGHTS_ENV",
    "build_mock_backend",
    "guided_noise",
    "load_real_backend",
    "make_target",
]
