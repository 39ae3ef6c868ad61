"""Dual-stream container (little-endian).

::

    4s   magic b"UVCS"
    B    version
    H    header length, then that many bytes of UTF-8 JSON
    I    video stream length, then the video stream
    I    analytic stream length, then the analytic stream
    I    CRC32 of every byte between the magic and the CRC
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

from .errors import CorruptionError, DecodeError, FormatError, InputError

MAGIC = b"UVCS"
VERSION = 1
_PRE = struct.Struct("<4sBH")
_U32 = struct.Struct("<I")


@dataclass
class DualBitstream:
    video_bytes: bytes
    analytic_bytes: bytes
    header: dict = field(default_factory=dict)

    def to_bytes(self):
        return pack_container(self.video_bytes, self.analytic_bytes, self.header)

    @classmethod
    def from_bytes(cls, data):
        return cls(*unpack_container(data))


def pack_container(video_bytes, analytic_bytes, meta):
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    if len(head) > 0xFFFF:
        raise InputError("container header exceeds 65535 bytes")
    body = bytearray(_PRE.pack(MAGIC, VERSION, len(head)))
    body += head
    body += _U32.pack(len(video_bytes)) + bytes(video_bytes)
    body += _U32.pack(len(analytic_bytes)) + bytes(analytic_bytes)
    body += _U32.pack(zlib.crc32(bytes(body[4:])))
    return bytes(body)


def _take(data, pos, n):
    if pos + n > len(data):
        raise DecodeError("container truncated")
    return data[pos:pos + n], pos + n


def unpack_container(data):
    """Return ``(video_bytes, analytic_bytes, meta)``."""
    data = bytes(data)
    if len(data) < 4:
        raise DecodeError("container truncated")
    if data[:4] != MAGIC:
        raise FormatError(f"bad container magic {data[:4]!r}")
    raw, pos = _take(data, 0, _PRE.size)
    _, version, head_len = _PRE.unpack(raw)
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    head, pos = _take(data, pos, head_len)
    raw, pos = _take(data, pos, 4)
    video, pos = _take(data, pos, _U32.unpack(raw)[0])
    raw, pos = _take(data, pos, 4)
    analytic, pos = _take(data, pos, _U32.unpack(raw)[0])
    raw, end = _take(data, pos, 4)
    if end != len(data):
        raise FormatError(f"{len(data) - end} trailing bytes after container")
    if _U32.unpack(raw)[0] != zlib.crc32(data[4:pos]):
        raise CorruptionError("container CRC mismatch")
    try:
        meta = json.loads(head.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"container header is not valid JSON: {exc}") from exc
    return video, analytic, meta
