"""Hermetic block-DCT codec used as a stand-in for an industrial encoder.

Frames are coded intra-only as 8x8 blocks per plane. The quality parameter
``q`` maps to a uniform quantiser step ``2 ** (q / 6)`` on the 8-bit sample
scale, so six steps of ``q`` halve the step like CRF/QP does. ``q == 0``
skips the transform and codes left/top prediction residuals losslessly.
"""

import struct

import numpy as np

from .. import coder
from ..clipio import from_uint8, to_uint8
from ..errors import DecodeError, InputError

Q_MIN, Q_MAX = 0, 63
BLOCK = 8
_HEADER = struct.Struct("<BBHHHB")
_VERSION = 1


def _dct_matrix(n=BLOCK):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


DCT = _dct_matrix()


def _zigzag(n=BLOCK):
    order = sorted(
        ((i, j) for i in range(n) for j in range(n)),
        key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]),
    )
    return np.array([i * n + j for i, j in order])


ZIGZAG = _zigzag()
UNZIGZAG = np.argsort(ZIGZAG)


def quant_step(q):
    return 2.0 ** (q / 6.0)


def _to_blocks(planes):
    # (P, H, W) -> (P * H/8 * W/8, 8, 8) in raster order within each plane
    p, h, w = planes.shape
    b = planes.reshape(p, h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)
    return b.reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks, p, h, w):
    b = blocks.reshape(p, h // BLOCK, w // BLOCK, BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)
    return b.reshape(p, h, w)


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _lossless_residuals(planes):
    x = planes.astype(np.int32)
    r = x.copy()
    r[:, :, 1:] -= x[:, :, :-1]
    r[:, 1:, 0] -= x[:, :-1, 0]
    r[:, 0, 0] -= 128
    return r


def _lossless_reconstruct(r):
    x = r.astype(np.int64).copy()
    x[:, 0, 0] += 128
    x[:, :, 0] = np.cumsum(x[:, :, 0], axis=1)
    return np.cumsum(x, axis=2)


def check_shape(shape):
    t, c, h, w = shape
    if h % BLOCK or w % BLOCK:
        raise InputError(f"toy codec needs H and W divisible by {BLOCK}, got {h}x{w}")
    if max(t, h, w) > 0xFFFF:
        raise InputError(f"clip dimensions exceed 65535: {shape}")


def encode(clip, q):
    """Encode a (T, C, H, W) clip in [0, 1] to bytes."""
    if not Q_MIN <= q <= Q_MAX:
        raise InputError(f"toy codec quality must be in [{Q_MIN}, {Q_MAX}], got {q}")
    clip = np.asarray(clip)
    check_shape(clip.shape)
    t, c, h, w = clip.shape
    planes = to_uint8(clip).reshape(t * c, h, w)
    header = _HEADER.pack(_VERSION, q, t, h, w, c)
    if q == 0:
        coeffs = _to_blocks(_lossless_residuals(planes)).reshape(-1, BLOCK * BLOCK)
    else:
        blocks = _to_blocks(planes.astype(np.float64) - 128.0)
        co = DCT @ blocks @ DCT.T
        levels = _round_half_away(co / quant_step(q)).astype(np.int32)
        coeffs = levels.reshape(-1, BLOCK * BLOCK)[:, ZIGZAG]
        coeffs[1:, 0] -= coeffs[:-1, 0].copy()
    return header + coder.encode_blocks(coeffs)


def parse_header(stream):
    if len(stream) < _HEADER.size:
        raise DecodeError("toy codec stream shorter than its header")
    version, q, t, h, w, c = _HEADER.unpack_from(stream)
    if version != _VERSION:
        raise DecodeError(f"unsupported toy codec version {version}")
    return q, (t, c, h, w)


def decode(stream):
    q, (t, c, h, w) = parse_header(stream)
    nblocks = t * c * (h // BLOCK) * (w // BLOCK)
    coeffs = coder.decode_blocks(bytes(stream[_HEADER.size:]), nblocks)
    if q == 0:
        planes = _lossless_reconstruct(_from_blocks(coeffs.reshape(-1, BLOCK, BLOCK), t * c, h, w))
        if planes.min() < 0 or planes.max() > 255:
            raise DecodeError("lossless residuals reconstruct out of range")
    else:
        coeffs = coeffs.astype(np.int64)
        coeffs[:, 0] = np.cumsum(coeffs[:, 0])
        levels = coeffs[:, UNZIGZAG].reshape(-1, BLOCK, BLOCK).astype(np.float64)
        blocks = DCT.T @ (levels * quant_step(q)) @ DCT
        planes = np.clip(np.floor(_from_blocks(blocks, t * c, h, w) + 128.0 + 0.5), 0, 255)
    return from_uint8(planes.reshape(t, c, h, w).astype(np.uint8))
