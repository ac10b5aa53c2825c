"""Single-file checkpoint container: JSON index header plus raw little-endian
tensor blobs. Saving the result of a load reproduces the file byte for byte,
and resuming training from a checkpoint is bit-exact (the shuffle/augment
RNG state travels with it).

Layout: magic "DTCK1\n", 8-byte little-endian header length, UTF-8 JSON
header (sorted keys), then blobs in the order listed in header["tensors"].
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DTCK1\n"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _collect_arrays(model, opt=None):
    arrays = {}
    for name, p in model.named_params().items():
        arrays[f"param/{name}"] = p.data
    if opt is not None:
        for name, v in opt.velocity.items():
            arrays[f"vel/{name}"] = v
    for key, stats in model.running_stats().items():
        for part, arr in stats.state_arrays().items():
            arrays[f"stats/{key}/{part}"] = arr
    return arrays


def save(path, model, opt=None, rng=None, epoch=0, meta=None):
    arrays = _collect_arrays(model, opt)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str.replace(">", "<").replace("=", "<"),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "epoch": int(epoch),
        "rng_state": _encode_rng(rng.state()) if rng is not None else None,
        "meta": meta or {},
        "tensors": entries,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for raw in blobs:
            f.write(raw)


def _encode_rng(state):
    # PCG64 state holds 128-bit ints; JSON handles them as text
    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        return x

    return conv(state)


def _decode_rng(state):
    def conv(x, key=None):
        if isinstance(x, dict):
            return {k: conv(v, k) for k, v in x.items()}
        if isinstance(x, str) and key not in ("bit_generator",):
            try:
                return int(x)
            except ValueError:
                return x
        return x

    return conv(state)


def read(path):
    """Raw header + arrays, without needing a model."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        body = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    arrays = {}
    for e in header["tensors"]:
        arr = np.frombuffer(body, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=int)),
                            offset=e["offset"]).reshape(e["shape"]).copy()
        arrays[e["name"]] = arr
    return header, arrays


def load(path, model, opt=None, rng=None):
    """Load into an already-built, config-compatible model. Returns epoch."""
    header, arrays = read(path)
    params = model.named_params()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        if tuple(arrays[key].shape) != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}")
        p.data = arrays[key].astype(p.data.dtype, copy=True)
    if opt is not None:
        for name in opt.velocity:
            key = f"vel/{name}"
            if key in arrays:
                opt.velocity[name] = arrays[key].astype(opt.velocity[name].dtype, copy=True)
    stats_state = {}
    for name, arr in arrays.items():
        if name.startswith("stats/"):
            _, key, part = name.split("/", 2)
            stats_state.setdefault(key, {})[part] = arr
    for key, stats in model.running_stats().items():
        if key in stats_state:
            stats.load_state(stats_state[key])
    if rng is not None and header.get("rng_state"):
        rng.set_state(_decode_rng(header["rng_state"]))
    return header["epoch"]
