"""Binary array files: a one-line JSON header followed by raw little-endian float64.

Layout: 8-byte little-endian header length, the UTF-8 JSON header, then the
array bytes in C order.  The header always records ``shape``.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import IntegrityError


def write_array(path, header, array):
    arr = np.ascontiguousarray(array, dtype="<f8")
    head = dict(header)
    head["shape"] = list(arr.shape)
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))
    return path


def read_array(path):
    """Return ``(header, array)``; raise IntegrityError on truncated files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IntegrityError(f"{path}: file too short")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header") from exc
    shape = tuple(header.get("shape", ()))
    body = raw[8 + n:]
    count = int(np.prod(shape)) if shape else 0
    if len(body) != 8 * count:
        raise IntegrityError(f"{path}: payload size {len(body)} does not match shape {shape}")
    arr = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
    return header, arr


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
