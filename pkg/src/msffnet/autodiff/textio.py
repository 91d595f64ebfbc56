"""Plain-text tensor dumps for test fixtures: a shape line, then whitespace-separated values."""
from __future__ import annotations

import os

import numpy as np

from .tensor import Tensor


def dump_tensor(path: str | os.PathLike, t: Tensor | np.ndarray) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    with open(path, "w") as fh:
        fh.write(" ".join(str(d) for d in arr.shape) + "\n")
        for row in arr.reshape(-1, arr.shape[-1] if arr.ndim else 1):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_tensor(path: str | os.PathLike) -> Tensor:
    with open(path) as fh:
        header = fh.readline().split()
        shape = tuple(int(d) for d in header)
        values = np.array(fh.read().split(), dtype=np.float64)
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: header {shape} needs {int(np.prod(shape))} values, found {values.size}")
    return Tensor(values.reshape(shape))
