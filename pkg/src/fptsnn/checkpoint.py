"""Flat binary parameter container.

Layout::

    8 bytes   little-endian uint64, length H of the header
    H bytes   UTF-8 JSON header
    payload   little-endian float64 arrays, C order, concatenated in header order

The header holds ``{"format", "version", "tensors": [{"name", "shape", "offset"}], ...}``
plus whatever metadata the caller adds (network spec, seed). Offsets count
float64 elements from the start of the payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .neurons import LearnableNeuronParams

FORMAT = "fptsnn-params"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict, **meta):
    tensors = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = dict(meta, format=FORMAT, version=VERSION, tensors=tensors)
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for arr in arrays.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path):
    """Return ``(arrays, header)``."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 8:
        raise CheckpointError(f"{path}: too short for a header length")
    (n,) = struct.unpack("<Q", blob[:8])
    if len(blob) < 8 + n:
        raise CheckpointError(f"{path}: header truncated")
    try:
        header = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    payload = np.frombuffer(blob, dtype="<f8", offset=8 + n)
    arrays = {}
    for spec in header["tensors"]:
        size = int(np.prod(spec["shape"], dtype=np.int64))
        start = spec["offset"]
        if start + size > payload.size:
            raise CheckpointError(f"{path}: payload truncated at {spec['name']}")
        arrays[spec["name"]] = payload[start:start + size].reshape(spec["shape"]).astype(np.float64)
    return arrays, header


def save_neuron_params(path, p: LearnableNeuronParams):
    save_arrays(path, {"A": p.a, "B": p.b}, kind="learnable_neuron", mask=p.mask, v_th=p.v_th)


def load_neuron_params(path) -> LearnableNeuronParams:
    arrays, header = load_arrays(path)
    return LearnableNeuronParams(arrays["A"], arrays["B"], header["mask"], header["v_th"])


def save_network(path, model, seed=None):
    save_arrays(path, model.params, kind="network", spec=model.spec.to_dict(),
                timesteps=model.timesteps, seed=seed)


def load_network(path):
    from .network import Network, NetworkSpec
    arrays, header = load_arrays(path)
    if header.get("kind") != "network":
        raise CheckpointError(f"{path}: not a network checkpoint")
    return Network(NetworkSpec.from_dict(header["spec"]), arrays, header["timesteps"])
