"""Binary field files: versioned header, little-endian float64 payload, trailing CRC-32.

Layout::

    magic     8 bytes   b"FHFIELD\\0"
    version   u32
    dim       u32
    kind      u32       index into FIELD_KINDS
    meta_len  u32       length of a UTF-8 JSON block of extra attributes
    lo, hi    f64[dim] each
    shape     u64[dim]
    meta      meta_len bytes
    values    f64, row-major (C order), trailing component axis for vector kinds
    crc32     u32 over every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .distance import DistanceField
from .grid import FIELD_KINDS, Field, GridDomain

MAGIC = b"FHFIELD\0"
VERSION = 1
_HEAD = struct.Struct("<8sIIII")


class FieldFormatError(ValueError):
    pass


class ChecksumError(FieldFormatError):
    pass


class UnsupportedVersion(FieldFormatError):
    pass


def _meta(field: Field) -> dict:
    if isinstance(field, DistanceField):
        return {"pole": np.asarray(field.pole).tolist(), "pole_index": field.pole_index,
                "direction": field.direction}
    return {}


def encode_field(field: Field) -> bytes:
    g = field.grid
    meta = json.dumps(_meta(field), sort_keys=True).encode()
    parts = [
        _HEAD.pack(MAGIC, VERSION, g.dim, FIELD_KINDS.index(field.kind), len(meta)),
        np.asarray(g.lo, "<f8").tobytes(),
        np.asarray(g.hi, "<f8").tobytes(),
        np.asarray(g.shape, "<u8").tobytes(),
        meta,
        np.ascontiguousarray(field.values, "<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_field(blob: bytes) -> Field:
    if len(blob) < _HEAD.size + 4:
        raise ChecksumError("file too short for a field header and checksum")
    magic, version, dim, kind, meta_len = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise FieldFormatError("not a field file (bad magic)")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported field file version {version} (expected {VERSION})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checksum mismatch: file is truncated or corrupted")
    if kind >= len(FIELD_KINDS):
        raise FieldFormatError(f"unknown field kind code {kind}")
    off = _HEAD.size
    lo = np.frombuffer(body, "<f8", dim, off)
    off += 8 * dim
    hi = np.frombuffer(body, "<f8", dim, off)
    off += 8 * dim
    shape = tuple(int(s) for s in np.frombuffer(body, "<u8", dim, off))
    off += 8 * dim
    meta = json.loads(body[off:off + meta_len].decode())
    off += meta_len
    kind_name = FIELD_KINDS[kind]
    full = shape + ((dim,) if kind_name in ("covector", "vector") else ())
    count = int(np.prod(full))
    if len(body) - off != 8 * count:
        raise FieldFormatError("payload size does not match the header")
    values = np.frombuffer(body, "<f8", count, off).reshape(full).astype(float)
    grid = GridDomain(lo.copy(), hi.copy(), shape)
    if kind_name == "distance" and "pole" in meta:
        return DistanceField(grid, values, pole=np.asarray(meta["pole"], float),
                             pole_index=int(meta.get("pole_index", 0)),
                             direction=meta.get("direction", "to_pole"))
    return Field(grid, values, kind_name)


def export_field(field: Field, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_field(field))
    return path


def import_field(path) -> Field:
    return decode_field(Path(path).read_bytes())
