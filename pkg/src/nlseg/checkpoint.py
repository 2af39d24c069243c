"""Self-describing checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   4 bytes   magic b"NLSG"
    offset 4   uint32    format version (currently 1)
    offset 8   uint64    header length N in bytes
    offset 16  N bytes   UTF-8 JSON header
    offset 16+N          tensor data, float32 little-endian, C order,
                         concatenated in header order

The header holds ``config``, ``inventory`` (list of codepoints),
``inventory_hash`` (sha256 of the inventory JSON), ``step``, ``rng_state``
and ``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}`` where
``offset`` is relative to the start of the tensor data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .corpus import PunctuationInventory
from .encoder import EncoderConfig, EncoderModel

MAGIC = b"NLSG"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    code = "checkpoint_error"


class CheckpointVersionError(CheckpointError):
    code = "version_mismatch"


class TruncatedCheckpointError(CheckpointError):
    code = "truncated"


class InventoryMismatchError(CheckpointError):
    code = "inventory_mismatch"


def save_checkpoint(model: EncoderModel, path, step: int = 0, rng_state=None) -> None:
    tensors = []
    blobs = []
    offset = 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "inventory": [ord(ch) for ch in model.inventory.chars],
        "inventory_hash": model.inventory.hash,
        "step": int(step),
        "rng_state": rng_state,
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def read_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise TruncatedCheckpointError(f"{path}: file too short for a checkpoint ({len(data)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    end = _PREFIX.size + hlen
    if len(data) < end:
        raise TruncatedCheckpointError(f"{path}: header truncated")
    header = json.loads(data[_PREFIX.size:end].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: header format version {header.get('format_version')}")
    return header, data[end:]


def load_checkpoint(path, inventory: PunctuationInventory | None = None):
    """Load a model; returns ``(model, header)``.

    If ``inventory`` is given its hash must match the stored one.
    """
    header, body = read_header(path)
    stored = PunctuationInventory(chr(cp) for cp in header["inventory"])
    if stored.hash != header["inventory_hash"]:
        raise InventoryMismatchError(f"{path}: stored inventory does not match its hash")
    if inventory is not None and inventory.hash != header["inventory_hash"]:
        raise InventoryMismatchError(f"{path}: checkpoint was trained with a different punctuation inventory")
    params = {}
    for t in header["tensors"]:
        start, stop = t["offset"], t["offset"] + t["nbytes"]
        if stop > len(body):
            raise TruncatedCheckpointError(f"{path}: tensor {t['name']} truncated")
        params[t["name"]] = np.frombuffer(body[start:stop], dtype="<f4").astype(np.float32).reshape(t["shape"])
    model = EncoderModel(EncoderConfig(**header["config"]), stored, params=params)
    return model, header
