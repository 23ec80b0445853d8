"""Bit-exact checkpoint container for parameters and optimizer state.

Single-file format: magic, 8-byte little-endian header length, a JSON header
(sorted keys) describing each tensor's dtype/shape/offset plus free-form
metadata, then the raw tensor bytes. The file contents are a pure function
of the stored values, so identical runs produce identical files and reload
is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelParams
from .optimizer import MomentumPolicy, MomentumState, arrays_to_state, state_to_arrays

MAGIC = b"HOIMIXCKPT1\n"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        entries[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len))
        body = fh.read()
    arrays = {}
    for name, entry in header["tensors"].items():
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(
            entry["shape"]
        ).copy()
    return arrays, header["meta"]


def save_checkpoint(
    path,
    params: ModelParams,
    state: MomentumState | None = None,
    meta: dict | None = None,
) -> None:
    """Dump parameters (and momentum buffers plus iteration counter, when a
    state is given) together with the metadata that produced them."""
    arrays = {f"param/{name}": arr for name, arr in params.items()}
    meta = dict(meta or {})
    if state is not None:
        arrays.update(state_to_arrays(state))
        meta["optimizer_t"] = state.t
    save_checkpoint_meta_check(meta)
    save_arrays(path, arrays, meta)


def save_checkpoint_meta_check(meta: dict) -> None:
    try:
        json.dumps(meta, sort_keys=True)
    except TypeError as exc:
        raise ValueError(f"checkpoint metadata is not JSON-serializable: {exc}") from exc


def load_checkpoint(path) -> tuple[ModelParams, MomentumState | None, dict]:
    arrays, meta = load_arrays(path)
    params = ModelParams(
        **{name: arrays[f"param/{name}"] for name in ModelParams.FIELDS}
    )
    state = None
    if any(key.startswith("momentum/") for key in arrays):
        policy = MomentumPolicy(meta.get("policy", MomentumPolicy.INDEPENDENT.value))
        state = arrays_to_state(arrays, int(meta["optimizer_t"]), policy)
    return params, state, meta
