"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``LATENT_PRIOR_DISABLE_NUMBA`` is set to a truthy value
(``1``, ``true``, ``yes``). The choice is made once at import time;
``ACTIVE`` names the selected implementation.
"""

import os

from . import numpy_impl

_FLAG = "LATENT_PRIOR_DISABLE_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


if _numba_disabled():
    _impl = numpy_impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:  # pragma: no cover - numba is a hard dependency in practice
        _impl = numpy_impl

ACTIVE = _impl.NAME

l1_diff = _impl.l1_diff
kl_moments = _impl.kl_moments
kl_grad = _impl.kl_grad
adamw_update = _impl.adamw_update
blend = _impl.blend
block_sum = _impl.block_sum
blend_vjp = _impl.blend_vjp
conv2d = _impl.conv2d
conv2d_vjp = _impl.conv2d_vjp

__all__ = [
    "ACTIVE",
    "adamw_update",
    "blend",
    "blend_vjp",
    "block_sum",
    "conv2d",
    "conv2d_vjp",
    "kl_grad",
    "kl_moments",
    "l1_diff",
]
