"""Binary checkpoints: ``RKGM01`` header, little-endian fields, CRC32 trailer."""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .models import MODEL_NAMES, EmbeddingState, ModelKind

MAGIC = b"RKGM01"
# model code, dim, n_entities, n_relations, relation width, margin, d_max, offset, step
_HEADER = struct.Struct("<B4I3dQ")


def checkpoint_bytes(kind: ModelKind, state: EmbeddingState) -> bytes:
    n_ent, dim = state.entity.shape
    n_rel, width = state.relation.shape
    body = _HEADER.pack(MODEL_NAMES.index(kind.name), dim, n_ent, n_rel, width,
                        kind.margin, kind.d_max, kind.offset, state.step)
    body += np.ascontiguousarray(state.entity, dtype="<f8").tobytes()
    body += np.ascontiguousarray(state.relation, dtype="<f8").tobytes()
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(kind: ModelKind, state: EmbeddingState, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(kind, state))
    os.replace(tmp, path)


def load_checkpoint(path, expected_dim=None, expected_model=None):
    """Return ``(ModelKind, EmbeddingState)``.

    Raises
    ------
    VersionMismatch
        Unknown header, or dimension/model differing from the expected ones.
    CorruptCheckpoint
        Truncated data or checksum failure.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != MAGIC:
        raise VersionMismatch(f"{path}: not an RKGM01 checkpoint")
    body = raw[6:-4]
    if len(raw) < 6 + _HEADER.size + 4 or struct.unpack("<I", raw[-4:])[0] != zlib.crc32(body):
        raise CorruptCheckpoint(f"{path}: checksum mismatch or truncated file")
    code, dim, n_ent, n_rel, width, margin, d_max, offset, step = _HEADER.unpack_from(body, 0)
    expected_len = _HEADER.size + 8 * (n_ent * dim + n_rel * width)
    if len(body) != expected_len or code >= len(MODEL_NAMES):
        raise CorruptCheckpoint(f"{path}: inconsistent payload size")
    kind = ModelKind(MODEL_NAMES[code], margin, d_max, offset)
    if expected_dim is not None and dim != expected_dim:
        raise VersionMismatch(f"checkpoint dim {dim} != configured dim {expected_dim}")
    if expected_model is not None and kind.name != expected_model:
        raise VersionMismatch(f"checkpoint model {kind.name} != configured model {expected_model}")
    off = _HEADER.size
    entity = np.frombuffer(body, "<f8", n_ent * dim, off).reshape(n_ent, dim).astype(float)
    off += 8 * n_ent * dim
    relation = np.frombuffer(body, "<f8", n_rel * width, off).reshape(n_rel, width).astype(float)
    return kind, EmbeddingState(entity, relation, step)
