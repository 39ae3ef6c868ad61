"""Industrial H.264/H.265 encoders driven through an ffmpeg subprocess.

Frames cross the process boundary as raw rgb24; the codec itself works in
8-bit 4:2:0 YCbCr, so dimensions must be even. SEI units are stripped from
the elementary stream because the encoder-settings banner alone would
dominate the rate of small clips.
"""

import os
import re
import shutil
import subprocess

import numpy as np

from ..clipio import from_uint8, to_uint8
from ..errors import CodecError, CodecUnavailableError, InputError

ENV_VAR = "UVC_FFMPEG"
CRF_RANGE = (0, 51)

_CODECS = {
    "external_h264": {
        "encoder": "libx264",
        "format": "h264",
        "extra": ["-x264-params", "log-level=error"],
        "sei_types": "6",
    },
    "external_h265": {
        "encoder": "libx265",
        "format": "hevc",
        "extra": ["-x265-params", "log-level=error:pools=none:frame-threads=1"],
        "sei_types": "39|40",
    },
}


def find_ffmpeg():
    """Locate the ffmpeg binary: $UVC_FFMPEG, then PATH, then imageio-ffmpeg."""
    path = os.environ.get(ENV_VAR)
    if path:
        if os.path.isfile(path) and os.access(path, os.X_OK):
            return path
        raise CodecUnavailableError(f"{ENV_VAR}={path} is not an executable ffmpeg binary")
    path = shutil.which("ffmpeg")
    if path:
        return path
    try:
        import imageio_ffmpeg
    except ImportError:
        imageio_ffmpeg = None
    if imageio_ffmpeg is not None:
        try:
            return imageio_ffmpeg.get_ffmpeg_exe()
        except RuntimeError:
            pass
    raise CodecUnavailableError(
        f"ffmpeg binary not found; install it or set {ENV_VAR} to its path"
    )


def available():
    try:
        find_ffmpeg()
    except CodecUnavailableError:
        return False
    return True


def _run(args, data):
    try:
        proc = subprocess.run(args, input=data, capture_output=True, check=False)
    except OSError as exc:
        raise CodecUnavailableError(f"cannot execute {args[0]}: {exc}") from exc
    if proc.returncode != 0:
        raise CodecError(
            f"{os.path.basename(args[0])} exited with status {proc.returncode}",
            proc.stderr.decode(errors="replace"),
        )
    return proc.stdout


def check_shape(shape):
    t, c, h, w = shape
    if c != 3:
        raise InputError(f"external codecs take 3-channel clips, got C={c}")
    if h % 2 or w % 2:
        raise InputError(f"external codecs need even H and W for 4:2:0, got {h}x{w}")


def encode(clip, codec_id, crf, gop_len=16, frame_rate=25.0):
    spec = _CODECS[codec_id]
    lo, hi = CRF_RANGE
    if not lo <= crf <= hi:
        raise InputError(f"CRF must be in [{lo}, {hi}], got {crf}")
    clip = np.asarray(clip)
    check_shape(clip.shape)
    t, c, h, w = clip.shape
    raw = np.ascontiguousarray(to_uint8(clip).transpose(0, 2, 3, 1)).tobytes()
    args = [
        find_ffmpeg(), "-hide_banner", "-loglevel", "error", "-nostdin",
        "-f", "rawvideo", "-pix_fmt", "rgb24", "-s", f"{w}x{h}", "-r", str(frame_rate),
        "-i", "-",
        "-c:v", spec["encoder"], "-preset", "medium", "-crf", str(int(crf)),
        "-g", str(int(gop_len)), "-bf", "0", "-threads", "1", "-pix_fmt", "yuv420p",
        *spec["extra"],
        "-bsf:v", f"filter_units=remove_types={spec['sei_types']}",
        "-f", spec["format"], "-",
    ]
    return _run(args, raw)


def probe_size(stream, codec_id):
    """Return (H, W) of an elementary stream by asking ffmpeg to describe it."""
    args = [find_ffmpeg(), "-hide_banner", "-f", _CODECS[codec_id]["format"], "-i", "-"]
    proc = subprocess.run(args, input=stream, capture_output=True, check=False)
    m = re.search(rb"Video: .*?(\d{2,5})x(\d{2,5})", proc.stderr)
    if not m:
        raise CodecError("could not determine frame size", proc.stderr.decode(errors="replace"))
    return int(m.group(2)), int(m.group(1))


def decode(stream, codec_id, size=None):
    if size is None:
        size = probe_size(stream, codec_id)
    h, w = size
    args = [
        find_ffmpeg(), "-hide_banner", "-loglevel", "error", "-nostdin",
        "-f", _CODECS[codec_id]["format"], "-i", "-",
        "-f", "rawvideo", "-pix_fmt", "rgb24", "-",
    ]
    raw = _run(args, bytes(stream))
    frame = h * w * 3
    if not raw or len(raw) % frame:
        raise CodecError(f"decoder produced {len(raw)} bytes, not a multiple of {frame}")
    a = np.frombuffer(raw, dtype=np.uint8).reshape(-1, h, w, 3).transpose(0, 3, 1, 2)
    return from_uint8(a)
