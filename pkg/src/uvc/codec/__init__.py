"""Conventional video stream: codec adapter, bpp accounting, difference maps."""

from dataclasses import dataclass

import numpy as np

from ..clipio import validate_clip
from ..errors import InputError
from . import external, toy_dct

CODEC_IDS = ("toy_dct", "external_h264", "external_h265")
CLI_NAMES = {"toy": "toy_dct", "h264": "external_h264", "h265": "external_h265"}

# CRF sweeps used for evaluation
UVC_CRFS = (51, 47, 43, 39)
BASELINE_CRFS = (47, 43, 39, 35)
TRAIN_CRFS = (47, 51)


@dataclass(frozen=True)
class CodecConfig:
    codec_id: str = "toy_dct"
    crf_or_q: int = 47
    gop_len: int = 16

    def __post_init__(self):
        if self.codec_id not in CODEC_IDS:
            raise InputError(f"unknown codec {self.codec_id!r}; choose from {CODEC_IDS}")
        lo, hi = self.quality_range
        if not lo <= self.crf_or_q <= hi:
            raise InputError(f"{self.codec_id} quality must be in [{lo}, {hi}], got {self.crf_or_q}")
        if self.gop_len < 1:
            raise InputError("gop_len must be positive")

    @property
    def quality_range(self):
        if self.codec_id == "toy_dct":
            return toy_dct.Q_MIN, toy_dct.Q_MAX
        return external.CRF_RANGE

    def with_quality(self, q):
        return CodecConfig(self.codec_id, int(q), self.gop_len)


def compute_bpp(num_bits, t, h, w):
    """Bits per luma pixel over a T x H x W clip."""
    if num_bits < 0:
        raise InputError("num_bits must be nonnegative")
    if t < 1 or h < 1 or w < 1:
        raise InputError(f"pixel count must be positive, got t={t} h={h} w={w}")
    return num_bits / (t * h * w)


def encode(clip, cfg):
    clip = validate_clip(clip)
    if cfg.codec_id == "toy_dct":
        return toy_dct.encode(clip, cfg.crf_or_q)
    return external.encode(clip, cfg.codec_id, cfg.crf_or_q, cfg.gop_len)


def decode(stream, cfg, size=None):
    if cfg.codec_id == "toy_dct":
        return toy_dct.decode(stream)
    return external.decode(stream, cfg.codec_id, size)


def encode_decode(clip, cfg):
    """Compress and decompress ``clip``; returns ``(decoded, stream, bpp)``."""
    clip = validate_clip(clip)
    t, _, h, w = clip.shape
    stream = encode(clip, cfg)
    decoded = decode(stream, cfg, (h, w))
    if decoded.shape[1:] != clip.shape[1:] or decoded.shape[0] != t:
        raise InputError(f"decoded shape {decoded.shape} differs from input {clip.shape}")
    return decoded, stream, compute_bpp(8 * len(stream), t, h, w)


def difference_map(x, x_dec):
    """Elementwise ``x - x_dec``; values lie in [-1, 1] for valid clips."""
    x = np.asarray(x)
    x_dec = np.asarray(x_dec)
    if x.shape != x_dec.shape:
        raise InputError(f"shape mismatch: {x.shape} vs {x_dec.shape}")
    return x - x_dec


__all__ = [
    "CodecConfig",
    "CODEC_IDS",
    "CLI_NAMES",
    "compute_bpp",
    "decode",
    "difference_map",
    "encode",
    "encode_decode",
]
