"""Binary checkpoints: JSON manifest followed by raw little-endian parameter data.

Layout::

    b"ATTNCKPT"                  8-byte magic
    uint64 little-endian         manifest length in bytes
    manifest (UTF-8 JSON)        format_version, config, dtype, params, meta
    data                         parameters back to back, at manifest offsets
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ConfigError
from .models import build
from .models.base import Seq2SeqModel
from .models.config import ModelConfig

MAGIC = b"ATTNCKPT"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def save_checkpoint(path: str | Path, model: Seq2SeqModel, meta: dict | None = None) -> None:
    dtype = np.dtype(model.dtype).newbyteorder("<")
    code = dtype.str
    if code not in _DTYPES:
        raise CheckpointFormatError(f"cannot store parameters of dtype {model.dtype}")
    entries, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=dtype).tobytes()
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "dtype": code,
        "params": entries,
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def read_manifest(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from None
    if blob[:len(MAGIC)] != MAGIC or len(blob) < len(MAGIC) + 8:
        raise CheckpointFormatError(f"{path}: not an attnbench checkpoint")
    (n,) = struct.unpack("<Q", blob[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        manifest = json.loads(blob[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointFormatError(f"{path}: corrupt manifest") from None
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version "
                                    f"{manifest.get('format_version') if isinstance(manifest, dict) else None}")
    return manifest, blob[start + n:]


def load_checkpoint(path: str | Path) -> tuple[Seq2SeqModel, dict]:
    """Rebuild the model recorded in ``path``; returns ``(model, meta)``."""
    manifest, data = read_manifest(path)
    try:
        config = ModelConfig.from_dict(manifest["config"])
        dtype = _DTYPES[manifest["dtype"]]
        entries = manifest["params"]
        model = build(config, np.random.default_rng(0), dtype=dtype.newbyteorder("="))
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointFormatError(f"{path}: manifest does not describe a model ({exc})") from None
    params = dict(model.named_parameters())
    if [e["name"] for e in entries] != list(params):
        raise CheckpointFormatError(f"{path}: parameter set does not match "
                                    f"{config.family} built from the stored config")
    expected = sum(p.size for p in params.values()) * dtype.itemsize
    if len(data) != expected:
        raise CheckpointFormatError(f"{path}: {len(data)} data bytes, expected {expected}")
    for e in entries:
        p = params[e["name"]]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointFormatError(f"{path}: {e['name']} has shape {e['shape']}, "
                                        f"model expects {list(p.shape)}")
        offset = e["offset"]
        if not isinstance(offset, int) or offset < 0 or offset + p.size * dtype.itemsize > len(data):
            raise CheckpointFormatError(f"{path}: {e['name']} lies outside the data section")
        arr = np.frombuffer(data, dtype=dtype, count=p.size, offset=offset)
        p.data = arr.reshape(p.shape).astype(model.dtype)
    return model, manifest.get("meta", {})
