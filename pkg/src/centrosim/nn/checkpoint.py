"""Checkpoint format: one JSON header line, then the flat little-endian
float32 parameter blob (concatenated in parameter order)."""

from __future__ import annotations

import json

import numpy as np


def save_checkpoint(path, header: dict, param_arrays) -> None:
    arrays = [np.asarray(a.values if hasattr(a, "values") else a) for a in param_arrays]
    header = dict(header)
    header["param_shapes"] = [list(a.shape) for a in arrays]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), dtype="<f4")
    arrays = []
    off = 0
    for shape in header["param_shapes"]:
        n = int(np.prod(shape)) if shape else 1
        arrays.append(flat[off:off + n].reshape(shape).copy())
        off += n
    if off != flat.size:
        raise ValueError(f"checkpoint blob has {flat.size} floats, header expects {off}")
    return header, arrays
