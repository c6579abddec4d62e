"""Named-tensor checkpoint archive.

Layout::

    b"PAERPR01"                     8-byte magic
    uint32 little-endian            header length in bytes
    JSON header (utf-8)             {"__meta__": {...}, "<name>": {"shape": [...],
                                     "dtype": "f32", "offset": <payload byte offset>}, ...}
    payload                         raw little-endian float32 tensors

Tensor names are ``<prefix>/<parameter path>`` with prefixes ``apr``, ``pae``,
``rpr_img``, ``rpr_pae`` and ``rpr_tf``. ``__meta__`` records the model kind
and constructor configuration so an archive can be loaded without outside
context.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..nn import Module
from ..pae import PaeConfig, PaeModel
from ..regressors import MODEL_KINDS, ModelConfig

MAGIC = b"PAERPR01"
PREFIXES = {"apr": "apr", "pae_model": "pae", "img": "rpr_img", "pae": "rpr_pae", "tf": "rpr_tf"}


class CheckpointError(Exception):
    code = "checkpoint_error"


class BadMagicError(CheckpointError):
    code = "bad_magic"


class TruncatedArchiveError(CheckpointError):
    code = "truncated_archive"


class ShapeMismatchError(CheckpointError):
    code = "shape_mismatch"


class UnknownTensorError(CheckpointError):
    code = "unknown_tensor"


class MissingTensorError(CheckpointError):
    code = "missing_tensor"


def _kind(model: Module) -> str:
    return "pae_model" if isinstance(model, PaeModel) else model.kind


def _meta(model: Module) -> dict:
    kind = _kind(model)
    meta = {"kind": kind, **model.meta()}
    if kind in ("pae", "tf"):
        meta["pae"] = model.pae.meta()
    return meta


def _build(meta: dict) -> Module:
    kind = meta["kind"]
    if kind == "pae_model":
        return PaeModel(PaeConfig(**meta["config"]), meta["scene_bounds"])
    config = ModelConfig.from_dict(meta["config"])
    cls = MODEL_KINDS[kind]
    if kind in ("pae", "tf"):
        pae = PaeModel(PaeConfig(**meta["pae"]["config"]), meta["pae"]["scene_bounds"])
        return cls(config, pae)
    return cls(config)


def tensor_names(model: Module) -> dict:
    prefix = PREFIXES[_kind(model)]
    return {f"{prefix}/{name.replace('.', '/')}": p for name, p in model.named_parameters()}


def save_checkpoint(model: Module, path) -> int:
    """Write ``model`` as float32; returns the archive size in bytes."""
    header: dict = {"__meta__": _meta(model)}
    blobs = []
    offset = 0
    for name, p in tensor_names(model).items():
        data = np.asarray(p.data, dtype="<f4")
        header[name] = {"shape": list(data.shape), "dtype": "f32", "offset": offset}
        blobs.append(data.tobytes())
        offset += data.nbytes
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)
    return path.stat().st_size


def read_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and validate an archive into (meta, {name: float32 array})."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise TruncatedArchiveError(f"{path}: truncated archive (no header length)")
    (head_len,) = struct.unpack("<I", raw[8:12])
    if 12 + head_len > len(raw):
        raise TruncatedArchiveError(f"{path}: truncated archive (header past end of file)")
    try:
        header = json.loads(raw[12:12 + head_len])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    payload = memoryview(raw)[12 + head_len:]
    meta = header.pop("__meta__", None)
    if meta is None:
        raise CheckpointError(f"{path}: header lacks __meta__")
    spans = []
    tensors = {}
    for name, entry in header.items():
        if entry.get("dtype") != "f32":
            raise CheckpointError(f"{name}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(int(s) for s in entry["shape"])
        start = int(entry["offset"])
        size = 4 * int(np.prod(shape, dtype=np.int64))
        if start < 0 or start + size > len(payload):
            raise TruncatedArchiveError(f"{path}: truncated archive ({name} extends past end of payload)")
        spans.append((start, start + size, name))
        tensors[name] = np.frombuffer(payload[start:start + size], dtype="<f4").reshape(shape).copy()
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CheckpointError(f"{path}: tensors {n0} and {n1} overlap")
    return meta, tensors


def load_checkpoint(path) -> Module:
    meta, tensors = read_archive(path)
    model = _build(meta).astype(np.float32)
    own = tensor_names(model)
    unknown = sorted(set(tensors) - set(own))
    if unknown:
        raise UnknownTensorError(f"unknown tensor names: {', '.join(unknown)}")
    missing = sorted(set(own) - set(tensors))
    if missing:
        raise MissingTensorError(f"missing tensors: {', '.join(missing)}")
    for name, p in own.items():
        if tensors[name].shape != p.shape:
            raise ShapeMismatchError(f"{name}: archive shape {tensors[name].shape} != model shape {p.shape}")
        p.data = tensors[name].astype(np.float32)
    if _kind(model) in ("pae", "tf"):
        model.pae.freeze()
    return model.eval()
