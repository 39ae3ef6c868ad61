"""Training objective and the optimisation loop.

The generator side (Enc-Net, entropy model, R-Net) minimises

    alpha * (L_con + L_local) + w_p * L_perceptual + w_r * rate_bpp
        + lambda_gan * L_gan_g  (+ MSE during warm-start)

The edge-side networks (Edge-Net, GED, projection head) receive only the
gradient of ``alpha * L_con``; letting them see ``L_local`` would let them
shrink every edge map to a constant. The patch discriminator has its own
optimiser.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .codec import CodecConfig, encode_decode
from .edge import batch_contrastive_loss, edge_l2
from .enc_net import EncNetConfig
from .entropy import estimate_rate, quantize
from .errors import ConfigurationError, InputError, NumericalError, TrainingError
from .model import UVCModel
from .r_net import RNetConfig

PRESETS = {
    "default": {},
    "desk": {
        "enc": {"widths": [16, 32, 48, 64], "n_kernels": 4, "analytic_channels": 64, "mlp_hidden": [64, 128]},
        "rnet": {"latent_channels": 64, "mid_channels": 48, "growth": 16, "n_tdense": 2},
        "edge_channels": 16,
        "disc_channels": 32,
        "perceptual_channels": [16, 32, 64],
        "lr": 5e-4,
        "entropy_lr_mult": 10.0,
    },
}


def _schema():
    text = resources.files("uvc").joinpath("schemas/train_config.schema.json").read_text()
    return json.loads(text)


@dataclass
class TrainConfig:
    preset: str = "default"
    alpha: float = 0.01
    lambda_gan: float = 1.0
    perceptual_weight: float = 1.0
    rate_weight: float = 1.0
    tau: float = 0.2
    lr: float = 1e-4
    entropy_lr_mult: float = 1.0
    betas: tuple = (0.9, 0.999)
    batch: int = 8
    clip_len: int = 4
    warm_iters: int = None
    warm_frac: float = 0.02
    total_iters: int = 2000
    crf_choices: tuple = (47, 51)
    codec: str = "toy_dct"
    seed: int = 0
    variant: str = "uvc"
    use_edge: bool = True
    edge_extractor: str = "learned"
    freeze_edge: bool = False
    ckpt_every: int = 500
    edge_channels: int = 32
    disc_channels: int = 64
    perceptual_channels: tuple = (32, 64, 128)
    perceptual_seed: int = 0
    enc: dict = field(default_factory=dict)
    rnet: dict = field(default_factory=dict)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.crf_choices = tuple(int(c) for c in self.crf_choices)
        self.perceptual_channels = tuple(self.perceptual_channels)
        try:
            jsonschema.validate(self.to_dict(), _schema())
        except jsonschema.ValidationError as exc:
            raise ConfigurationError(f"invalid training config: {exc.message}") from exc
        for crf in self.crf_choices:
            try:
                CodecConfig(self.codec, crf)
            except InputError as exc:
                raise ConfigurationError(f"bad crf_choices: {exc}") from exc
        self.enc_config()
        self.rnet_config()

    @property
    def effective_warm_iters(self):
        if self.warm_iters is not None:
            return int(self.warm_iters)
        return int(round(self.warm_frac * self.total_iters))

    def enc_config(self):
        try:
            return EncNetConfig(**self.enc)
        except TypeError as exc:
            raise ConfigurationError(f"bad enc block: {exc}") from exc

    def rnet_config(self):
        try:
            return RNetConfig(**{"analytic_channels": self.enc_config().analytic_channels, **self.rnet})
        except TypeError as exc:
            raise ConfigurationError(f"bad rnet block: {exc}") from exc

    def to_dict(self):
        d = asdict(self)
        for k in ("betas", "crf_choices", "perceptual_channels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d, overrides=None):
        """Defaults < preset < ``d`` < ``overrides``."""
        merged = dict(d or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        preset = merged.get("preset", "default")
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        known = {f.name for f in fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        base = {k: (dict(v) if isinstance(v, dict) else v) for k, v in PRESETS[preset].items()}
        for k, v in merged.items():
            if k in ("enc", "rnet") and isinstance(v, dict):
                base[k] = {**base.get(k, {}), **v}
            else:
                base[k] = v
        return cls(**base)

    @classmethod
    def from_json(cls, path, overrides=None):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, overrides)


def build_model(cfg):
    return UVCModel(cfg.enc_config(), cfg.rnet_config(), cfg.edge_channels, cfg.edge_extractor)


# ---------------------------------------------------------------- losses

def _frames(clip):
    return clip.flatten(0, 1) if clip.dim() == 5 else clip


class PerceptualPyramid(nn.Module):
    """Frozen multi-scale conv feature extractor with seeded random weights."""

    def __init__(self, channels=(32, 64, 128), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        cin = 3
        for i, c in enumerate(channels):
            conv1 = nn.Conv2d(cin, c, 3, stride=1 if i == 0 else 2, padding=1)
            conv2 = nn.Conv2d(c, c, 3, padding=1)
            for conv in (conv1, conv2):
                fan_in = conv.weight[0].numel()
                conv.weight.data = torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
                conv.bias.data.zero_()
            self.stages.append(nn.Sequential(conv1, nn.ReLU(), conv2, nn.ReLU()))
            cin = c
        self.requires_grad_(False)

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def _unit(f, eps=1e-3):
    return f / torch.sqrt((f * f).sum(dim=1, keepdim=True) + eps)


def perceptual_loss(x_hat, x, net):
    """Sum over scales of channel-normalised squared feature distances,
    averaged over positions and frames."""
    if x_hat.shape != x.shape:
        raise InputError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    total = 0.0
    for fh, f in zip(net(_frames(x_hat)), net(_frames(x))):
        total = total + ((_unit(fh) - _unit(f)) ** 2).sum(dim=1).mean()
    return total


class PatchDiscriminator(nn.Module):
    """PatchGAN: three stride-2 4x4 convs, then two stride-1 ones (70x70 field)."""

    def __init__(self, channels=64, n_layers=3):
        super().__init__()
        layers = [nn.Conv2d(3, channels, 4, 2, 1), nn.LeakyReLU(0.2)]
        c = channels
        for i in range(1, n_layers):
            layers += [nn.Conv2d(c, 2 * c, 4, 2, 1), nn.LeakyReLU(0.2)]
            c *= 2
        layers += [nn.Conv2d(c, 2 * c, 4, 1, 1), nn.LeakyReLU(0.2), nn.Conv2d(2 * c, 1, 4, 1, 1)]
        self.net = nn.Sequential(*layers)
        self.min_size = 2 ** (n_layers + 2)

    def forward(self, clip):
        x = _frames(clip)
        if min(x.shape[-2:]) < self.min_size:
            raise InputError(f"discriminator needs frames of at least {self.min_size}px, got {tuple(x.shape[-2:])}")
        return self.net(x)


def lsgan_losses(disc, real_clip, fake_clip):
    """``(g_loss, d_loss)``; ``d_loss`` sees the fake detached."""
    d_real = disc(real_clip)
    d_fake = disc(fake_clip.detach())
    d_loss = 0.5 * ((d_real - 1) ** 2).mean() + 0.5 * (d_fake ** 2).mean()
    g_loss = 0.5 * ((disc(fake_clip) - 1) ** 2).mean()
    return g_loss, d_loss


@dataclass
class LossBreakdown:
    edge: float
    perceptual: float
    rate_bits: float
    gan_g: float
    gan_d: float
    mse_warm: float
    total: float
    rate_bpp: float = 0.0


@dataclass
class LossTerms:
    """Tensor-valued loss components of one forward pass."""
    l_con: torch.Tensor
    l_local: torch.Tensor
    perceptual: torch.Tensor
    rate_bits: torch.Tensor
    rate_bpp: torch.Tensor
    gan_g: torch.Tensor
    gan_d: torch.Tensor
    mse_warm: torch.Tensor
    total: torch.Tensor
    x_hat: torch.Tensor

    @property
    def edge(self):
        return self.l_con + self.l_local

    def breakdown(self):
        v = lambda t: float(t.detach())  # noqa: E731
        return LossBreakdown(v(self.edge), v(self.perceptual), v(self.rate_bits), v(self.gan_g),
                             v(self.gan_d), v(self.mse_warm), v(self.total), v(self.rate_bpp))


def total_loss(model, x, x_dec, it, cfg, perceptual_net, disc=None, generator=None):
    """All loss terms for a (B, T, 3, H, W) batch at iteration ``it``."""
    zero = x.new_zeros(())
    b, t, _, h, w = x.shape
    if cfg.variant == "uvc":
        s = model.analyze(x, x_dec)
        s_q = quantize(s, "noise", generator)
        try:
            bits = estimate_rate(s_q, model.entropy)
        except NumericalError as exc:
            raise TrainingError(f"non-finite loss component 'rate_bits' at iteration {it}: {exc}") from exc
        x_hat = model.restore(x_dec, s_q)
    else:
        bits = zero
        x_hat = model.restore(x_dec, None)
    rate_bpp = bits / (b * t * h * w)

    if cfg.use_edge and cfg.alpha > 0:
        e_hat, e = model.edge_net(x_hat), model.edge_net(x)
        l_local = edge_l2(e_hat, e).mean()
        l_con = batch_contrastive_loss(model.ged.from_edges(e_hat), model.ged.from_edges(e), cfg.tau, model.head)
    else:
        l_local = l_con = zero
    perc = perceptual_loss(x_hat, x, perceptual_net) if cfg.perceptual_weight > 0 else zero
    if disc is not None and cfg.lambda_gan > 0:
        gan_g, gan_d = lsgan_losses(disc, x, x_hat)
    else:
        gan_g = gan_d = zero
    mse_warm = F.mse_loss(x_hat, x) if it < cfg.effective_warm_iters else zero

    total = (cfg.alpha * (l_con + l_local) + cfg.perceptual_weight * perc + cfg.rate_weight * rate_bpp
             + cfg.lambda_gan * gan_g + mse_warm)
    terms = LossTerms(l_con, l_local, perc, bits, rate_bpp, gan_g, gan_d, mse_warm, total, x_hat)
    for name in ("l_con", "l_local", "perceptual", "rate_bits", "gan_g", "gan_d", "mse_warm", "total"):
        if not torch.isfinite(getattr(terms, name)):
            raise TrainingError(f"non-finite loss component {name!r} at iteration {it}")
    return terms


# ---------------------------------------------------------------- data

def to_uint8_array(clips):
    clips = np.asarray(clips)
    if clips.dtype == np.uint8:
        return clips
    return np.clip(np.floor(clips * 255 + 0.5), 0, 255).astype(np.uint8)


def precompress(clips, crfs, codec="toy_dct"):
    """Decode every clip at every quality once; returns {crf: uint8 array}."""
    clips = to_uint8_array(clips)
    out = {}
    for crf in crfs:
        cfg = CodecConfig(codec, int(crf))
        dec = np.empty_like(clips)
        for i, clip in enumerate(clips):
            dec[i] = to_uint8_array(encode_decode(clip.astype(np.float64) / 255, cfg)[0])
        out[int(crf)] = dec
    return out


# ---------------------------------------------------------------- trainer

class Trainer:
    """Single-writer optimisation loop with exact resume."""

    def __init__(self, cfg, clips, decoded=None, out_dir=None, init_from=None):
        self.cfg = cfg
        self.clips = to_uint8_array(clips)
        if self.clips.ndim != 5 or self.clips.shape[0] < cfg.batch:
            raise InputError(f"need at least batch={cfg.batch} clips shaped (N, T, 3, H, W)")
        if self.clips.shape[1] < cfg.clip_len:
            raise InputError(f"clips have {self.clips.shape[1]} frames, clip_len is {cfg.clip_len}")
        self.decoded = decoded if decoded is not None else precompress(self.clips, cfg.crf_choices, cfg.codec)
        missing = set(cfg.crf_choices) - set(self.decoded)
        if missing:
            raise InputError(f"no decoded clips for qualities {sorted(missing)}")
        self.out_dir = Path(out_dir) if out_dir else None

        torch.manual_seed(cfg.seed)
        self.model = build_model(cfg)
        self.disc = PatchDiscriminator(cfg.disc_channels)
        self.perceptual = PerceptualPyramid(cfg.perceptual_channels, cfg.perceptual_seed)
        if init_from is not None:
            arrays, _ = ckpt.load_checkpoint(init_from)
            ckpt.load_module(self.model, "model", arrays, strict=False)
            ckpt.load_module(self.disc, "disc", arrays, strict=False)

        mods = [self.model.rnet] if cfg.variant == "0bit" else [self.model.enc, self.model.rnet]
        main = [p for m in mods for p in m.parameters()]
        ent = list(self.model.entropy.parameters()) if cfg.variant == "uvc" else []
        self.gen_params = main + ent
        edge_on = cfg.use_edge and cfg.alpha > 0 and not cfg.freeze_edge
        self.edge_params = self.model.edge_parameters() if edge_on else []
        groups = [{"params": main}, {"params": ent, "lr": cfg.lr * cfg.entropy_lr_mult}, {"params": self.edge_params}]
        self.opt_g = torch.optim.Adam([g for g in groups if g["params"]], lr=cfg.lr, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=cfg.lr, betas=cfg.betas)

        self.rng = np.random.default_rng(cfg.seed)
        self.noise = torch.Generator().manual_seed(cfg.seed)
        self.step_idx = 0
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0

    def _next_indices(self):
        n, b = len(self.clips), self.cfg.batch
        if self._pos + b > len(self._perm):
            self._perm = self.rng.permutation(n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + b]
        self._pos += b
        return idx

    def next_batch(self):
        crf = self.cfg.crf_choices[int(self.rng.integers(len(self.cfg.crf_choices)))]
        idx = self._next_indices()
        t = self.cfg.clip_len
        x = torch.from_numpy(self.clips[idx, :t].astype(np.float32) / 255)
        x_dec = torch.from_numpy(self.decoded[crf][idx, :t].astype(np.float32) / 255)
        return crf, x, x_dec

    def step(self):
        it = self.step_idx
        crf, x, x_dec = self.next_batch()
        self.model.train()
        terms = total_loss(self.model, x, x_dec, it, self.cfg, self.perceptual, self.disc, self.noise)

        grads = torch.autograd.grad(terms.total, self.gen_params, retain_graph=bool(self.edge_params),
                                    allow_unused=True)
        egrads = []
        if self.edge_params:
            egrads = torch.autograd.grad(self.cfg.alpha * terms.l_con, self.edge_params, allow_unused=True)
        self.opt_g.zero_grad(set_to_none=True)
        for p, g in zip(self.gen_params + self.edge_params, list(grads) + list(egrads)):
            p.grad = g
        self.opt_g.step()

        if self.cfg.lambda_gan > 0:
            self.opt_d.zero_grad(set_to_none=True)
            terms.gan_d.backward()
            self.opt_d.step()

        self.step_idx += 1
        rec = terms.breakdown()
        self._log(it, crf, rec)
        if self.out_dir and self.cfg.ckpt_every and self.step_idx % self.cfg.ckpt_every == 0:
            self.save(self.out_dir / f"ckpt_{self.step_idx:07d}.npz")
        return rec

    def run(self, n_steps=None, callback=None):
        end = self.cfg.total_iters if n_steps is None else self.step_idx + n_steps
        trace = []
        while self.step_idx < end:
            rec = self.step()
            trace.append(rec)
            if callback:
                callback(self.step_idx, rec)
        if self.out_dir:
            self.save(self.out_dir / "final.npz")
        return trace

    def _log(self, it, crf, rec):
        if not self.out_dir:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "log.ndjson", "a") as fh:
            fh.write(json.dumps({"step": it, "crf": crf, **asdict(rec)}) + "\n")

    # checkpoints

    def save(self, path):
        arrays = {}
        arrays.update(ckpt.state_arrays("model", self.model.state_dict()))
        arrays.update(ckpt.state_arrays("disc", self.disc.state_dict()))
        og, og_meta = ckpt.optimizer_arrays("opt_g", self.opt_g)
        od, od_meta = ckpt.optimizer_arrays("opt_d", self.opt_d)
        arrays.update(og)
        arrays.update(od)
        arrays["rng/noise"] = self.noise.get_state().numpy()
        arrays["rng/torch"] = torch.get_rng_state().numpy()
        arrays["rng/perm"] = self._perm
        meta = {
            "config": self.cfg.to_dict(),
            "step": self.step_idx,
            "pos": self._pos,
            "numpy_rng": self.rng.bit_generator.state,
            "opt_g": og_meta,
            "opt_d": od_meta,
        }
        return ckpt.save_checkpoint(path, arrays, meta)

    @classmethod
    def resume(cls, path, clips, decoded=None, out_dir=None):
        arrays, meta = ckpt.load_checkpoint(path)
        cfg = TrainConfig.from_dict(meta["config"])
        tr = cls(cfg, clips, decoded, out_dir)
        ckpt.load_module(tr.model, "model", arrays)
        ckpt.load_module(tr.disc, "disc", arrays)
        ckpt.load_optimizer(tr.opt_g, "opt_g", arrays, meta["opt_g"])
        ckpt.load_optimizer(tr.opt_d, "opt_d", arrays, meta["opt_d"])
        tr.noise.set_state(torch.from_numpy(np.array(arrays["rng/noise"])))
        torch.set_rng_state(torch.from_numpy(np.array(arrays["rng/torch"])))
        tr._perm = np.array(arrays["rng/perm"])
        tr._pos = meta["pos"]
        tr.rng.bit_generator.state = meta["numpy_rng"]
        tr.step_idx = meta["step"]
        return tr


def load_model(path):
    """Model and config from a checkpoint; the model is returned in eval mode."""
    arrays, meta = ckpt.load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = build_model(cfg)
    ckpt.load_module(model, "model", arrays)
    return model.eval(), cfg
