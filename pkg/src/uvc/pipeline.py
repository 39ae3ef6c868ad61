"""End-to-end encode/decode for the three operating modes.

``baseline`` sends only the conventional video stream, ``0bit`` restores
the decoded video without side information, ``uvc`` adds the analytic
stream and restores with it.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import codec as codecs
from .clipio import validate_clip
from .container import DualBitstream
from .entropy import compress, decompress, quantize
from .errors import ConfigurationError, DecodeError, InputError

MODES = ("uvc", "baseline", "0bit")
HEADER_VERSION = 1


@dataclass
class PipelineConfig:
    codec: codecs.CodecConfig
    mode: str = "uvc"
    model_path: str = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "baseline" and not self.model_path:
            raise ConfigurationError(f"mode {self.mode!r} needs a model checkpoint")


def _pad16(x):
    """Pad (..., H, W) on the bottom/right to multiples of 16."""
    h, w = x.shape[-2:]
    ph, pw = -h % 16, -w % 16
    if not ph and not pw:
        return x
    lead = x.shape[:-3]
    flat = x.reshape(-1, *x.shape[-3:])
    mode = "reflect" if ph < h and pw < w else "replicate"
    out = F.pad(flat, (0, pw, 0, ph), mode=mode)
    return out.reshape(*lead, *out.shape[-3:])


def _tensor(clip):
    return torch.from_numpy(np.ascontiguousarray(clip, dtype=np.float32))


def _require_model(model, mode):
    if model is None:
        raise ConfigurationError(f"mode {mode!r} needs a model")
    model.eval()


@torch.no_grad()
def analytic_feature(model, clip, decoded):
    """Rounded S for one (T, 3, H, W) clip; returns (C_s, T, h, w)."""
    x = _pad16(_tensor(clip))[None]
    xd = _pad16(_tensor(decoded))[None]
    return quantize(model.analyze(x, xd), "round")[0]


@torch.no_grad()
def restore(model, decoded, s_hat=None):
    t, c, h, w = decoded.shape
    xd = _pad16(_tensor(decoded))[None]
    s = None if s_hat is None else s_hat[None]
    out = model.restore(xd, s)[0, :, :, :h, :w]
    return out.double().numpy()


def uvc_encode(clip, codec_cfg, model=None, mode="uvc"):
    """Encode one clip into a :class:`DualBitstream`."""
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    clip = validate_clip(clip)
    t, c, h, w = clip.shape
    decoded, video, bpp_v = codecs.encode_decode(clip, codec_cfg)
    header = {
        "version": HEADER_VERSION,
        "T": t, "H": h, "W": w, "C": c,
        "codec_id": codec_cfg.codec_id,
        "crf": codec_cfg.crf_or_q,
        "gop_len": codec_cfg.gop_len,
        "mode": mode,
        "analytic_shape": [],
        "model_hash": None,
    }
    analytic = b""
    if mode == "uvc":
        _require_model(model, mode)
        if c != 3:
            raise InputError("the analytic stream needs 3-channel clips")
        s = analytic_feature(model, clip, decoded)
        analytic = compress(s, model.entropy)
        header["analytic_shape"] = list(s.shape)
        header["model_hash"] = model.entropy.model_hash()
    header["bpp_video"] = bpp_v
    header["bpp_analytic"] = codecs.compute_bpp(8 * len(analytic), t, h, w)
    return DualBitstream(video, analytic, header)


def stream_bpp(bitstream):
    """``(video, analytic, total)`` bpp; total is the sum of the two."""
    hd = bitstream.header
    n = (hd["T"], hd["H"], hd["W"])
    v = codecs.compute_bpp(8 * len(bitstream.video_bytes), *n)
    a = codecs.compute_bpp(8 * len(bitstream.analytic_bytes), *n)
    return v, a, v + a


def codec_config_of(header):
    return codecs.CodecConfig(header["codec_id"], int(header["crf"]), int(header.get("gop_len", 16)))


def uvc_decode(bitstream, model=None, mode=None):
    """Decode a :class:`DualBitstream` (or its bytes) to a (T, C, H, W) clip.

    ``mode`` overrides the mode recorded in the header; ``0bit`` ignores
    any analytic payload.
    """
    if isinstance(bitstream, (bytes, bytearray)):
        bitstream = DualBitstream.from_bytes(bitstream)
    hd = bitstream.header
    mode = mode or hd.get("mode", "baseline")
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    decoded = codecs.decode(bitstream.video_bytes, codec_config_of(hd), (hd["H"], hd["W"]))
    if decoded.shape != (hd["T"], hd["C"], hd["H"], hd["W"]):
        raise DecodeError(f"video stream decodes to {decoded.shape}, header says "
                          f"{(hd['T'], hd['C'], hd['H'], hd['W'])}")
    if mode == "baseline":
        return decoded
    _require_model(model, mode)
    if mode == "0bit":
        return restore(model, decoded)
    if not hd.get("analytic_shape"):
        raise InputError("stream has no analytic payload; decode it in 'baseline' or '0bit' mode")
    s = decompress(bitstream.analytic_bytes, hd["analytic_shape"], model.entropy, hd.get("model_hash"))
    return restore(model, decoded, s)
