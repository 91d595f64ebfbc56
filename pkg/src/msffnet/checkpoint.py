"""Self-describing checkpoint container.

Layout: the ASCII tag ``MSFF1\\n``, an 8-byte little-endian manifest length, a UTF-8
JSON manifest, then raw little-endian array bytes at the offsets the manifest lists.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig

MAGIC = b"MSFF1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    epoch: int = 0  # epochs completed
    step: int = 0  # optimizer steps completed
    rng: dict = field(default_factory=dict)


def _arrays(ckpt: Checkpoint):
    for group, arrays in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name in sorted(arrays):
            yield f"{group}/{name}", np.asarray(arrays[name])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries, blobs, offset = [], [], 0
    for key, arr in _arrays(ckpt):
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": key, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": "MSFF1", "config": ckpt.config.to_dict(), "epoch": ckpt.epoch,
                "step": ckpt.step, "adam_t": ckpt.adam_t, "rng": ckpt.rng, "arrays": entries}
    head = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not an MSFF1 checkpoint")
    if len(data) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + n > len(data):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start:start + n])
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: corrupt manifest: {err}") from err
    body = start + n
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in manifest["arrays"]:
        lo = body + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise CheckpointError(f"{path}: array {e['name']} runs past end of file")
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                            offset=lo).reshape(e["shape"])
        group, name = e["name"].split("/", 1)
        groups[group][name] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(TrainConfig.from_dict(manifest["config"]), groups["param"], groups["adam_m"],
                      groups["adam_v"], int(manifest["adam_t"]), int(manifest["epoch"]),
                      int(manifest["step"]), manifest.get("rng", {}))
