"""Checkpoint container: JSON header + raw little-endian float32 tensors.

Layout: magic ``LMZS`` | uint64-LE header length | UTF-8 JSON header |
payload. The header declares tensor order/shapes/dtypes and a sha256 of the
payload, so a load either reproduces every tensor exactly or fails loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointIntegrityError, CheckpointVersionError

MAGIC = b"LMZS"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1"), "int64": np.dtype("<i8")}


@dataclass
class Checkpoint:
    """Parameter tensors keyed by module path, plus training metadata."""

    params: dict[str, np.ndarray]
    step: int = 0
    config: dict = field(default_factory=dict)
    rng_state: bytes | None = None


def params_digest(params: dict[str, np.ndarray]) -> str:
    """Stable sha256 over sorted names and raw tensor bytes."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = []
    chunks = []
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name])
        if arr.dtype == np.float64:
            arr = arr.astype(np.float32)
        dtype_name = {np.dtype("float32"): "float32", np.dtype("uint8"): "uint8", np.dtype("int64"): "int64"}.get(
            arr.dtype.newbyteorder("=")
        )
        if dtype_name is None:
            raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        arr = arr.astype(_DTYPES[dtype_name])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name})
        chunks.append(arr.tobytes())
    if ckpt.rng_state is not None:
        entries.append({"name": "__rng__", "shape": [len(ckpt.rng_state)], "dtype": "uint8"})
        chunks.append(bytes(ckpt.rng_state))

    payload = b"".join(chunks)
    header = {
        "version": FORMAT_VERSION,
        "step": ckpt.step,
        "config": ckpt.config,
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(payload)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(raw[4:12], "little")
    try:
        header = json.loads(raw[12 : 12 + header_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('version')} != supported {FORMAT_VERSION}"
        )
    payload = raw[12 + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointIntegrityError(f"{path}: payload checksum mismatch")

    params: dict[str, np.ndarray] = {}
    rng_state = None
    offset = 0
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(entry["shape"])
        offset += nbytes
        if entry["name"] == "__rng__":
            rng_state = arr.tobytes()
        else:
            params[entry["name"]] = arr.copy()
    return Checkpoint(params=params, step=header["step"], config=header["config"], rng_state=rng_state)
