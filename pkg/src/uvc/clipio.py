"""Raw clip files: 16-byte little-endian header followed by planar uint8.

Header layout::

    0   4s  magic  b"UVCV"
    4   B   version
    5   H   T
    7   H   H
    9   H   W
    11  B   C
    12  4x  reserved (zero)

Samples follow in T, C, H, W order.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"UVCV"
VERSION = 1
_HEADER = struct.Struct("<4sBHHHB4x")
HEADER_SIZE = _HEADER.size


def validate_clip(x, *, name="clip"):
    """Return ``x`` as a float64 (T, C, H, W) array, raising on bad input."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise InputError(f"{name} must be T x C x H x W, got shape {x.shape}")
    t, c, h, w = x.shape
    if min(t, c, h, w) < 1:
        raise InputError(f"{name} has an empty dimension: {x.shape}")
    if c not in (1, 3):
        raise InputError(f"{name} must have 1 or 3 channels, got {c}")
    x = x.astype(np.float64, copy=False)
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite values")
    return x


def to_uint8(x):
    return np.clip(np.floor(np.asarray(x, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(a):
    return np.asarray(a, dtype=np.float64) / 255.0


def pack_clip(x):
    x = validate_clip(x)
    t, c, h, w = x.shape
    if max(t, h, w) > 0xFFFF:
        raise InputError(f"clip dimensions exceed 65535: {x.shape}")
    return _HEADER.pack(MAGIC, VERSION, t, h, w, c) + to_uint8(x).tobytes()


def unpack_clip(data):
    if len(data) < HEADER_SIZE:
        raise FormatError("clip file shorter than its header")
    magic, version, t, h, w, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad clip magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported clip version {version}")
    n = t * c * h * w
    if len(data) != HEADER_SIZE + n:
        raise FormatError(f"clip payload is {len(data) - HEADER_SIZE} bytes, expected {n}")
    a = np.frombuffer(data, dtype=np.uint8, offset=HEADER_SIZE).reshape(t, c, h, w)
    return from_uint8(a)


def write_clip(path, x):
    Path(path).write_bytes(pack_clip(x))


def read_clip(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read clip {path}: {exc}") from exc
    return unpack_clip(data)
