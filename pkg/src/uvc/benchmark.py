"""Rate-performance evaluation.

Bjøntegaard deltas with task accuracy as the quality axis, CRF sweeps of
the three pipelines against a frozen toy classifier, RP-curve plots and
the analytic-stream share report.
"""

import csv
import io
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

try:
    from numpy.exceptions import RankWarning
except ImportError:  # numpy < 1.25
    from numpy import RankWarning

from . import codec as codecs
from .entropy import compress, quantize
from .errors import DomainError, InputError
from .pipeline import MODES, uvc_decode, uvc_encode

CSV_FIELDS = ("crf", "bpp_video", "bpp_analytic", "metric", "n_clips")


@dataclass(frozen=True)
class RatePerformancePoint:
    bpp: float
    metric: float


@dataclass(frozen=True)
class SweepPoint:
    crf: int
    bpp_video: float
    bpp_analytic: float
    metric: float
    n_clips: int

    @property
    def bpp(self):
        return self.bpp_video + self.bpp_analytic

    def rp(self):
        return RatePerformancePoint(self.bpp, self.metric)


@dataclass(frozen=True)
class BDResult:
    bd_metric: float
    bdbr: float


# ---------------------------------------------------------------- BD math

def _curve(points, name):
    pts = [p.rp() if isinstance(p, SweepPoint) else p for p in points]
    pts = [(p.bpp, p.metric) if isinstance(p, RatePerformancePoint) else tuple(p) for p in pts]
    if len(pts) < 4:
        raise InputError(f"{name} curve needs at least 4 points for a cubic fit, got {len(pts)}")
    arr = np.array(sorted(pts), dtype=np.float64)
    rate, metric = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(arr)) or np.any(rate <= 0):
        raise InputError(f"{name} curve needs finite values and positive rates")
    if np.any(np.diff(rate) <= 0):
        raise InputError(f"{name} curve rates must be distinct")
    return np.log10(rate), metric


def _avg_poly(x, y, lo, hi):
    with warnings.catch_warnings():
        warnings.simplefilter("error", RankWarning)
        try:
            p = np.polyfit(x, y, 3)
        except RankWarning:
            warnings.warn("ill-conditioned cubic fit in BD computation", RuntimeWarning, stacklevel=3)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankWarning)
                p = np.polyfit(x, y, 3)
    ip = np.polyint(p)
    return (np.polyval(ip, hi) - np.polyval(ip, lo)) / (hi - lo)


def bd_metric(anchor, test):
    """Average metric gain and rate difference of ``test`` over ``anchor``.

    Cubic fits of metric over log10(rate) (and the inverse) are integrated
    over the intersection of both curves' ranges. ``bdbr`` is a percentage.
    """
    la, ma = _curve(anchor, "anchor")
    lt, mt = _curve(test, "test")
    lo, hi = max(la.min(), lt.min()), min(la.max(), lt.max())
    if lo >= hi:
        raise DomainError("anchor and test curves do not overlap in rate")
    d_metric = _avg_poly(lt, mt, lo, hi) - _avg_poly(la, ma, lo, hi)
    lo, hi = max(ma.min(), mt.min()), min(ma.max(), mt.max())
    if lo >= hi:
        raise DomainError("anchor and test curves do not overlap in metric")
    d_log = _avg_poly(mt, lt, lo, hi) - _avg_poly(ma, la, lo, hi)
    return BDResult(float(d_metric), float((10 ** d_log - 1) * 100))


# ---------------------------------------------------------------- oracle

class ToyOracle(nn.Module):
    """Small 2D CNN over frames stacked along channels."""

    def __init__(self, t=4, n_classes=8, width=32):
        super().__init__()
        w = width

        def blk(i, o, s):
            return [nn.Conv2d(i, o, 3, s, 1, bias=False), nn.BatchNorm2d(o), nn.ReLU()]

        self.t = t
        self.features = nn.Sequential(
            *blk(3 * t, w, 1), *blk(w, w, 2), *blk(w, 2 * w, 1), *blk(2 * w, 2 * w, 2),
            *blk(2 * w, 4 * w, 2), *blk(4 * w, 4 * w, 2), nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(4 * w, n_classes)

    def forward(self, clips):
        if clips.dim() != 5 or clips.shape[1] != self.t:
            raise InputError(f"oracle expects (B, {self.t}, 3, H, W), got {tuple(clips.shape)}")
        return self.head(self.features(clips.flatten(1, 2)).flatten(1))


def toy_oracle_train(clips, labels, epochs=10, batch=32, lr=3e-3, seed=0, n_classes=8):
    """Train on clean clips; returns the oracle frozen in eval mode."""
    clips = np.asarray(clips)
    labels = np.asarray(labels)
    if len(clips) == 0:
        raise InputError("empty training set")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = ToyOracle(clips.shape[1], n_classes)
    opt = torch.optim.Adam(net.parameters(), lr)
    steps = epochs * -(-len(clips) // batch)
    sched = torch.optim.lr_scheduler.OneCycleLR(opt, lr, total_steps=steps)
    x_all = torch.from_numpy(clips.astype(np.float32))
    y_all = torch.from_numpy(labels.astype(np.int64))
    net.train()
    for _ in range(epochs):
        perm = torch.from_numpy(rng.permutation(len(clips)))
        for i in range(0, len(clips), batch):
            idx = perm[i:i + batch]
            if len(idx) < 2:
                continue
            loss = F.cross_entropy(net(x_all[idx]), y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
    net.eval()
    net.requires_grad_(False)
    return net


@torch.no_grad()
def oracle_predict(oracle, clips, batch=64):
    """Labels for a (T, 3, H, W) clip or an (N, T, 3, H, W) stack."""
    clips = np.asarray(clips, dtype=np.float32)
    single = clips.ndim == 4
    if single:
        clips = clips[None]
    out = [oracle(torch.from_numpy(clips[i:i + batch])).argmax(1).numpy() for i in range(0, len(clips), batch)]
    pred = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
    return int(pred[0]) if single else pred


def accuracy(oracle, clips, labels):
    return 100.0 * float(np.mean(oracle_predict(oracle, clips) == np.asarray(labels)))


# ---------------------------------------------------------------- sweeps

def rp_sweep(pipeline, crf_list, clips, labels, oracle, model=None, codec_id="toy_dct"):
    """One :class:`SweepPoint` per quality setting (metric = top-1 in %)."""
    if pipeline not in MODES:
        raise InputError(f"pipeline must be one of {MODES}")
    if len(clips) == 0:
        raise InputError("empty evaluation set")
    points = []
    for crf in crf_list:
        cfg = codecs.CodecConfig(codec_id, int(crf))
        restored, bv, ba = [], [], []
        for clip in clips:
            bs = uvc_encode(clip, cfg, model, pipeline)
            restored.append(uvc_decode(bs, model))
            bv.append(bs.header["bpp_video"])
            ba.append(bs.header["bpp_analytic"])
        acc = accuracy(oracle, np.stack(restored), labels)
        points.append(SweepPoint(int(crf), float(np.mean(bv)), float(np.mean(ba)), acc, len(clips)))
    return points


def write_rp_csv(path, points):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, CSV_FIELDS, lineterminator="\n")
        wr.writeheader()
        for p in points:
            wr.writerow({k: getattr(p, k) for k in CSV_FIELDS})


def read_rp_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        return [SweepPoint(int(r["crf"]), float(r["bpp_video"]), float(r["bpp_analytic"]),
                           float(r["metric"]), int(r["n_clips"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path} is not an RP csv ({', '.join(CSV_FIELDS)})") from exc


def interp_metric(points, bpp):
    """Metric of a curve at ``bpp`` by linear interpolation in log-rate.

    Outside the curve's range the nearest end point is used (flat
    extrapolation), which favours the curve being interpolated.
    """
    arr = np.array(sorted((p.bpp, p.metric) for p in points))
    return float(np.interp(np.log10(bpp), np.log10(arr[:, 0]), arr[:, 1]))


def analytic_share(points):
    """Per-point analytic-stream share of the total rate, in percent."""
    return [
        {"crf": p.crf, "bpp_video": p.bpp_video, "bpp_analytic": p.bpp_analytic,
         "share_pct": 100.0 * p.bpp_analytic / p.bpp if p.bpp > 0 else 0.0}
        for p in points
    ]


# ---------------------------------------------------------------- plots

def plot_rp(curves, out_path, title="Rate-performance", ylabel="Top-1 accuracy (%)"):
    """Write an SVG chart of ``{name: points}``; bytes depend only on inputs."""
    if not curves:
        raise InputError("nothing to plot")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "uvc-rp", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for name in sorted(curves):
            pts = sorted((p.bpp if hasattr(p, "bpp") else p[0], p.metric if hasattr(p, "metric") else p[1])
                         for p in curves[name])
            if not pts:
                raise InputError(f"curve {name!r} is empty")
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=name)
        ax.set_xlabel("bpp")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    Path(out_path).write_text(buf.getvalue())
    return Path(out_path)


# ---------------------------------------------------------------- ablations

@torch.no_grad()
def enc_ablation_report(models, clips, codec_cfg):
    """bpp of the rounded analytic feature and parameter count per variant.

    ``models`` maps a variant name to a :class:`~uvc.model.UVCModel`.
    """
    rows = []
    for name, model in models.items():
        model.eval()
        bits, pix = 0, 0
        for clip in clips:
            dec = codecs.encode_decode(clip, codec_cfg)[0]
            x = torch.from_numpy(np.asarray(clip, dtype=np.float32))[None]
            xd = torch.from_numpy(dec.astype(np.float32))[None]
            s = quantize(model.analyze(x, xd), "round")[0]
            bits += 8 * len(compress(s, model.entropy))
            pix += clip.shape[0] * clip.shape[2] * clip.shape[3]
        rows.append({
            "variant": name,
            "bpp_analytic": bits / pix,
            "enc_params": sum(p.numel() for p in model.enc.parameters()),
            **{k: v for k, v in asdict(model.enc.config).items() if k in ("use_diff", "kernel_mode")},
        })
    return rows
