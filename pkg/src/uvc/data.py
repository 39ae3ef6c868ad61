"""Procedural toy video-classification dataset.

Each clip shows one textured shape drifting across a smooth background.
The label combines the shape class with the horizontal motion direction:
``label = 2 * shape + direction``, giving 8 balanced classes. Shape
identity lives in edges and texture, which heavy block quantisation
destroys first; motion survives as a moving blob.
"""

import json
from pathlib import Path

import numpy as np

from .clipio import read_clip, to_uint8, write_clip
from .errors import InputError

SHAPES = ("square", "disk", "triangle", "cross")
DIRECTIONS = ("right", "left")
N_CLASSES = len(SHAPES) * len(DIRECTIONS)


def _shape_mask(kind, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= r * 0.85
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "triangle":
        # apex up; base at cy + r*0.8
        rel = (dy + r) / (1.8 * r)
        return (rel >= 0) & (rel <= 1) & (np.abs(dx) <= rel * r)
    if kind == "cross":
        arm = r * 0.35
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    raise InputError(f"unknown shape {kind!r}")


def render_clip(rng, label, t=4, h=64, w=64):
    """Render one (T, 3, H, W) clip in [0, 1] for ``label``."""
    shape = SHAPES[label // 2]
    direction = 1 if label % 2 == 0 else -1
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx / w + np.sin(theta) * yy / h + 1) / 2
    bg = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    fg_a = rng.uniform(0.0, 1.0, size=3)
    fg_b = np.clip(fg_a + rng.choice([-1, 1]) * rng.uniform(0.25, 0.45), 0, 1)
    period = rng.uniform(4.0, 7.0)
    phi = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * (np.cos(phi) * xx + np.sin(phi) * yy) / period))

    r = rng.uniform(0.15, 0.2) * min(h, w)
    speed = rng.uniform(0.06, 0.09) * w
    travel = speed * (t - 1)
    margin = r + 2
    x_start = rng.uniform(margin, max(margin, w - margin - travel))
    if direction < 0:
        x_start = w - x_start
    cy = rng.uniform(margin, h - margin)
    dy = rng.uniform(-1.0, 1.0)

    frames = np.empty((t, 3, h, w))
    for k in range(t):
        cx = x_start + direction * speed * k
        m = _shape_mask(shape, yy, xx, cy + dy * k, cx, r)
        tex = fg_a[:, None, None] * stripes + fg_b[:, None, None] * (1 - stripes)
        frames[k] = np.where(m[None], tex, bg)
    return np.clip(frames, 0.0, 1.0)


def balanced_labels(rng, n):
    labels = np.arange(n) % N_CLASSES
    rng.shuffle(labels)
    return labels


def make_clips(seed, n_clips, t=4, h=64, w=64):
    """In-memory variant of :func:`gen_toy_dataset`; returns (clips, labels)."""
    rng = np.random.default_rng(seed)
    labels = balanced_labels(rng, n_clips)
    clips = np.stack([render_clip(rng, int(y), t, h, w) for y in labels]) if n_clips else np.zeros((0, t, 3, h, w))
    # round-trip through 8 bits so in-memory and on-disk data agree
    clips = np.floor(clips * 255 + 0.5) / 255
    return clips, labels


def gen_toy_dataset(out_dir, seed, n_clips, t=4, h=64, w=64):
    """Write ``n_clips`` clips plus ``labels.json`` under ``out_dir``."""
    if n_clips < 1:
        raise InputError("n_clips must be positive")
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    clips, labels = make_clips(seed, n_clips, t, h, w)
    names = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:06d}.uvcv"
        write_clip(out / "clips" / name, clip)
        names.append(name)
    meta = {
        "seed": seed,
        "t": t,
        "h": h,
        "w": w,
        "classes": [f"{s}-{d}" for s in SHAPES for d in DIRECTIONS],
        "clips": names,
        "labels": [int(y) for y in labels],
    }
    (out / "labels.json").write_text(json.dumps(meta, indent=1))
    return out


def load_dataset(root, as_uint8=False):
    """Read a dataset directory back as ``(clips, labels)`` arrays.

    With ``as_uint8`` the clips stay 8-bit, which quarters memory use.
    """
    root = Path(root)
    meta_path = root / "labels.json"
    if not meta_path.exists():
        raise InputError(f"{root} is not a dataset directory (no labels.json)")
    meta = json.loads(meta_path.read_text())
    if not meta.get("clips"):
        raise InputError(f"{root} lists no clips")
    read = (lambda p: to_uint8(read_clip(p))) if as_uint8 else read_clip
    clips = np.stack([read(root / "clips" / n) for n in meta["clips"]])
    return clips, np.asarray(meta["labels"], dtype=np.int64)
