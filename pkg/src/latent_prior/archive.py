"""Named-array checkpoint archives.

Files use the safetensors layout:

* bytes 0..8: little-endian u64 ``n``, the manifest length;
* bytes 8..8+n: UTF-8 JSON manifest mapping each array name to
  ``{"dtype": "F64", "shape": [...], "data_offsets": [begin, end]}``, plus an
  optional ``"__metadata__"`` object of string key/values;
* the rest: raw little-endian array data, offsets relative to the end of the
  manifest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from safetensors.numpy import load_file, save_file


def save_archive(path, arrays: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: np.ascontiguousarray(v) for k, v in arrays.items()}
    meta = None if metadata is None else {k: str(v) for k, v in metadata.items()}
    save_file(tensors, str(path), metadata=meta)
    return path


def load_archive(path) -> dict[str, np.ndarray]:
    return load_file(str(path))


def read_manifest(path) -> dict:
    """Return the parsed JSON manifest without touching the array data."""
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))
