"""Checkpoint file format shared by every trainable model.

Layout::

    b"MMIACKPT"                  8-byte magic
    uint32 little-endian          header length in bytes
    header                        UTF-8 JSON: {"version", "kind", "meta", "tensors": [[name, shape], ...]}
    blobs                         little-endian float32, concatenated in header order

``meta`` is free-form per model kind (architecture, vocabulary, vocab hash, ...).
"""

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"MMIACKPT"
VERSION = 1


def vocab_hash(vocab):
    return hashlib.sha256("\n".join(vocab).encode()).hexdigest()[:16]


def save(path, kind, meta, state_dict):
    names = list(state_dict)
    arrays = [state_dict[n].detach().cpu().numpy().astype("<f4") for n in names]
    header = json.dumps({"version": VERSION, "kind": kind, "meta": meta,
                         "tensors": [[n, list(a.shape)] for n, a in zip(names, arrays)]},
                        sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for a in arrays:
            f.write(a.tobytes())


def load(path, kind):
    """Return ``(meta, state_dict)``; raises CheckpointError on any mismatch."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if raw[:8] != MAGIC or len(raw) < 12:
        raise CheckpointError(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: format version {header.get('version')} != {VERSION}")
    if header.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {header.get('kind')!r}, expected {kind!r}")
    state = OrderedDict()
    offset = 12 + hlen
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) * 4
        blob = raw[offset:offset + n]
        if len(blob) != n:
            raise CheckpointError(f"{path}: truncated at tensor {name}")
        state[name] = torch.from_numpy(np.frombuffer(blob, dtype="<f4").reshape(shape).copy())
        offset += n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], state


def load_into(module, state, path="checkpoint"):
    own = module.state_dict()
    if list(own) != list(state):
        raise CheckpointError(f"{path}: parameter names differ from the model")
    for name, t in state.items():
        if tuple(own[name].shape) != tuple(t.shape):
            raise CheckpointError(f"{path}: shape mismatch for {name}: "
                                  f"{tuple(t.shape)} vs {tuple(own[name].shape)}")
    module.load_state_dict(state)
