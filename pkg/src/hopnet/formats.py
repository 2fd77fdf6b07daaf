"""Versioned binary container shared by checkpoints and trajectory files.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic, e.g. b"HOPNTRJ\\0" or b"HOPNCKP\\0"
    8       4     u32 format version
    12      4     u32 header length H in bytes
    16      H     UTF-8 JSON header
    16+H    ...   array payload, arrays packed back to back

The JSON header holds a free-form ``meta`` object and an ``arrays`` list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` records. ``dtype`` is
``"<f8"`` or ``"<i8"``; ``offset`` is relative to the payload start; data is
C-ordered. Values are stored bit-for-bit, so save/load round-trips exactly.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError

_PREFIX = struct.Struct("<8sII")
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _coerce(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return np.ascontiguousarray(arr, dtype="<f8"), "<f8"
    if arr.dtype.kind in "iub":
        return np.ascontiguousarray(arr, dtype="<i8"), "<i8"
    raise FormatError(f"unsupported array dtype {arr.dtype}")


def encode(magic, version, meta, arrays):
    """Serialise ``arrays`` (ordered name -> ndarray) and ``meta`` into bytes."""
    records = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data, dtype = _coerce(arr)
        raw = data.tobytes()
        records.append({"name": name, "dtype": dtype, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": records}, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(magic, version, len(header)) + header + b"".join(chunks)


def decode(blob, magic, max_version):
    """Inverse of :func:`encode`; returns ``(version, meta, arrays)``."""
    if len(blob) < _PREFIX.size:
        raise FormatError("file too short for a header")
    got_magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version > max_version:
        raise FormatError(f"format version {version} is newer than supported version {max_version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from None
    payload = memoryview(blob)[start + hlen:]
    arrays = {}
    for rec in header["arrays"]:
        dtype = _DTYPES.get(rec["dtype"])
        if dtype is None:
            raise FormatError(f"unknown dtype {rec['dtype']}")
        end = rec["offset"] + rec["nbytes"]
        if end > len(payload):
            raise FormatError(f"array {rec['name']} runs past end of file")
        arr = np.frombuffer(payload[rec["offset"]:end], dtype=dtype).reshape(rec["shape"])
        arrays[rec["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
    return version, header["meta"], arrays


def write_file(path, blob):
    with open(path, "wb") as fh:
        fh.write(blob)
    return sha256_bytes(blob)


def read_file(path):
    with open(path, "rb") as fh:
        return fh.read()


def sha256_bytes(blob):
    return hashlib.sha256(blob).hexdigest()


def sha256_file(path):
    return sha256_bytes(read_file(path))
