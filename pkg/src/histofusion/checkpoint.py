"""Binary checkpoint container.

Layout::

    magic    8 bytes  b"HFNCKPT\\0"
    version  u32 little-endian
    hlen     u64 little-endian
    header   hlen bytes of UTF-8 JSON (config echo, tensor directory, extras)
    payload  little-endian float32 tensors, in directory order

Each directory entry is ``{"name", "shape", "offset"}`` with ``offset`` in
bytes from the start of the payload.  The header is serialized with sorted
keys and fixed separators so equal contents always give equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import (ConfigurationError, CorruptHeaderError, MissingTensorError,
                     ShapeMismatchError, TruncatedPayloadError, UnknownTensorError,
                     VersionMismatchError)
from .network import HistoFusionNet, build_model

MAGIC = b"HFNCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_LE_F32 = np.dtype("<f4")


def encode(tensors: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> bytes:
    directory = []
    offset = 0
    chunks = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=_LE_F32)
        directory.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = {"config": config, "tensors": directory, "extra": extra or {}}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks)


def decode(blob: bytes, source: str = "<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint; returns (header, {name: float32 array})."""
    if len(blob) < _PREFIX.size:
        raise CorruptHeaderError(f"{source}: file too short for a checkpoint prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptHeaderError(f"{source}: bad magic bytes {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if start + hlen > len(blob):
        raise CorruptHeaderError(f"{source}: header length {hlen} exceeds file size")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        entries = header["tensors"]
        header["config"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptHeaderError(f"{source}: unreadable header: {exc}") from exc
    payload = memoryview(blob)[start + hlen:]
    tensors: dict[str, np.ndarray] = {}
    for entry in entries:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError) as exc:
            raise CorruptHeaderError(f"{source}: malformed directory entry {entry!r}") from exc
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * count
        if offset < 0 or end > len(payload):
            raise TruncatedPayloadError(
                f"{source}: tensor {name!r} needs bytes {offset}..{end}, payload has {len(payload)}")
        arr = np.frombuffer(payload[offset:end], dtype=_LE_F32).reshape(shape)
        tensors[name] = arr.astype(np.float32)
    return header, tensors


def save_checkpoint(model: HistoFusionNet, path, extra: dict | None = None) -> None:
    blob = encode(model.state_dict(), model.config.to_dict(), extra)
    Path(path).write_bytes(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CorruptHeaderError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob, str(path))


def load_state(model: HistoFusionNet, tensors: dict[str, np.ndarray], strict: bool = True,
               source: str = "<state>") -> None:
    """Copy named arrays into ``model``; all checks run before anything is written."""
    params = dict(model.named_parameters())
    for name, arr in tensors.items():
        if name not in params:
            raise UnknownTensorError(f"{source}: tensor {name!r} is not a model parameter")
        if arr.shape != params[name].shape:
            raise ShapeMismatchError(
                f"{source}: tensor {name!r} has shape {arr.shape}, model expects "
                f"{params[name].shape}")
    if strict:
        missing = [n for n in params if n not in tensors]
        if missing:
            raise MissingTensorError(f"{source}: checkpoint lacks {missing[0]!r}"
                                     + (f" and {len(missing) - 1} more" if len(missing) > 1 else ""))
    for name, arr in tensors.items():
        params[name].data[...] = arr


def load_checkpoint(path, config: ModelConfig | None = None,
                    strict: bool = True) -> HistoFusionNet:
    """Rebuild a model from a checkpoint.

    The stored config is used unless ``config`` is given; in that case a stage-1
    checkpoint can be loaded into a larger model with ``strict=False``.
    """
    header, tensors = read_checkpoint(path)
    if config is None:
        try:
            config = ModelConfig.from_dict(header["config"])
        except ConfigurationError as exc:
            raise CorruptHeaderError(f"{path}: {exc}") from exc
    model = build_model(config)
    load_state(model, tensors, strict=strict, source=str(path))
    return model
