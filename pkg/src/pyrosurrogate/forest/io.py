"""Binary model format (all fields little-endian).

    offset  size  field
    0       4     magic b"PYRF"
    4       2     version (u16) = 1
    6       2     flags (u16): bits 0-7 generator id, bit 8 set = no bootstrap
    8       8     seed (u64)
    16      4     n_trees (u32)
    20      4     n_features (u32)
    24      ...   per tree: node_count (u32) then node_count x 21-byte records
                  kind u8 | feature u32 | value f64 | left u32 | right u32
    end-8   8     FNV-1a 64 of every preceding byte (u64)

Leaves keep their bootstrap sample count in ``left`` and zero in ``right``.
Names, hyperparameters and normalization statistics are not part of the
binary; ``save_model`` writes them to a JSON sidecar.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, ChecksumError, DecodeError, TruncatedPayloadError, UnsupportedVersionError
from ..rng import RNG_ID
from . import _kernels as K
from .model import ForestModel, HyperParams, Tree

MAGIC = b"PYRF"
FORMAT_VERSION = 1
FLAG_NO_BOOTSTRAP = 0x0100

_HEADER = struct.Struct("<4sHHQII")
_COUNT = struct.Struct("<I")
NODE_DTYPE = np.dtype(
    [("kind", "u1"), ("feature", "<u4"), ("value", "<f8"), ("left", "<u4"), ("right", "<u4")]
)
assert NODE_DTYPE.itemsize == 21


def checksum(data: bytes) -> int:
    return int(K.fnv1a64(np.frombuffer(data, dtype=np.uint8)))


def serialize(model: ForestModel) -> bytes:
    flags = RNG_ID | (0 if model.bootstrap else FLAG_NO_BOOTSTRAP)
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, flags, model.hyper.seed, len(model.trees), model.n_features)
    ]
    for tree in model.trees:
        rec = np.empty(tree.n_nodes, dtype=NODE_DTYPE)
        rec["kind"] = tree.kind
        rec["feature"] = tree.feature
        rec["value"] = tree.value
        rec["left"] = tree.left
        rec["right"] = tree.right
        parts.append(_COUNT.pack(tree.n_nodes))
        parts.append(rec.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", checksum(body))


def deserialize(data: bytes, *, metadata: dict | None = None) -> ForestModel:
    """Decode a model binary; ``metadata`` (the JSON sidecar) restores names."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a PYRF model (bad magic)")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("payload ends inside the header")
    _, version, flags, seed, n_trees, n_features = _HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported model format version {version}")
    if flags & 0xFF != RNG_ID:
        raise UnsupportedVersionError(f"unknown generator id {flags & 0xFF}")

    pos = _HEADER.size
    trees = []
    for _ in range(n_trees):
        if pos + _COUNT.size > len(data) - 8:
            raise TruncatedPayloadError("payload ends before a tree header")
        (count,) = _COUNT.unpack_from(data, pos)
        pos += _COUNT.size
        end = pos + count * NODE_DTYPE.itemsize
        if end > len(data) - 8:
            raise TruncatedPayloadError("payload ends inside a node block")
        rec = np.frombuffer(data, dtype=NODE_DTYPE, count=count, offset=pos)
        trees.append(
            Tree(
                kind=rec["kind"].astype(np.uint8),
                feature=rec["feature"].astype(np.int64),
                value=rec["value"].astype(np.float64),
                left=rec["left"].astype(np.int64),
                right=rec["right"].astype(np.int64),
            )
        )
        pos = end
    if len(data) - pos < 8:
        raise TruncatedPayloadError("payload ends before the checksum")
    if len(data) - pos > 8:
        raise DecodeError(f"{len(data) - pos - 8} unexpected trailing bytes")
    (stored,) = struct.unpack_from("<Q", data, pos)
    if stored != checksum(data[:pos]):
        raise ChecksumError("checksum mismatch")

    meta = metadata or {}
    hyper_fields = dict(meta.get("hyper", {}))
    hyper_fields.update(n_estimators=n_trees, seed=seed)
    names = meta.get("feature_names") or [f"f{i}" for i in range(n_features)]
    if len(names) != n_features:
        raise DecodeError("metadata feature_names do not match the binary")
    norm = None
    if meta.get("norm_stats") is not None:
        from ..telemetry import NormStats

        norm = NormStats.from_dict(meta["norm_stats"])
    return ForestModel(
        trees=tuple(trees),
        hyper=HyperParams.from_dict(hyper_fields),
        feature_names=tuple(names),
        target_name=meta.get("target_name", "y"),
        norm_stats=norm,
        train_fingerprint=meta.get("train_fingerprint", ""),
        lag=int(meta.get("lag", 0)),
        bootstrap=not flags & FLAG_NO_BOOTSTRAP,
    )


def model_metadata(model: ForestModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "target_name": model.target_name,
        "feature_names": list(model.feature_names),
        "lag": model.lag,
        "hyper": model.hyper.to_dict(),
        "train_fingerprint": model.train_fingerprint,
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
    }


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_model(model: ForestModel, path) -> tuple[Path, Path]:
    path = Path(path)
    path.write_bytes(serialize(model))
    meta = sidecar_path(path)
    meta.write_text(json.dumps(model_metadata(model), indent=2, sort_keys=True) + "\n")
    return path, meta


def load_model(path) -> ForestModel:
    path = Path(path)
    meta_path = sidecar_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else None
    return deserialize(path.read_bytes(), metadata=meta)
