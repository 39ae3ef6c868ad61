"""Recipient-side restoration network.

Restoration runs in a low-resolution latent: frames are pixel-unshuffled by
4, downsampled by two stride-2 convolutions, refined by temporal dense
blocks, modulated by the analytic feature, and decoded back through a
mirrored path whose skip connections are gated by attention. The network
predicts a residual over the decoded frames.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError

SHUFFLE = 4


@dataclass
class RNetConfig:
    latent_channels: int = 192
    mid_channels: int = 96
    growth: int = 32
    n_tdense: int = 4
    analytic_channels: int = 128
    fuse_groups: int = 8

    def __post_init__(self):
        if self.latent_channels % 2:
            raise ConfigurationError("latent_channels must be even")
        for ch in (self.mid_channels, 3 * SHUFFLE * SHUFFLE):
            if ch % self.fuse_groups:
                raise ConfigurationError(f"{ch} channels not divisible by fuse_groups={self.fuse_groups}")

    def to_dict(self):
        return asdict(self)


def pixel_shuffle_down(frame, r=SHUFFLE):
    """(…, C, H, W) -> (…, C*r*r, H/r, W/r), lossless."""
    h, w = frame.shape[-2:]
    if h % r or w % r:
        raise InputError(f"pixel shuffle needs H, W divisible by {r}, got {h}x{w}")
    return F.pixel_unshuffle(frame, r)


def pixel_shuffle_up(feature, r=SHUFFLE):
    if feature.shape[-3] % (r * r):
        raise InputError(f"channel count {feature.shape[-3]} not divisible by {r * r}")
    return F.pixel_shuffle(feature, r)


class EncoderDown(nn.Module):
    """Two LeakyReLU-activated stride-2 convolutions (spatial /4)."""

    def __init__(self, cin, cmid, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cmid, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cmid, cout, 3, stride=2, padding=1)

    def forward(self, x, return_skips=False):
        h, w = x.shape[-2:]
        if h % 4 or w % 4:
            raise InputError(f"encoder_down needs H, W divisible by 4, got {h}x{w}")
        e1 = F.leaky_relu(self.conv1(x), 0.1)
        e2 = F.leaky_relu(self.conv2(e1), 0.1)
        return (e2, e1) if return_skips else e2


class TDense(nn.Module):
    """Dense block over space whose last layer is a pair of temporal convs.

    Works on (B, C, T, H, W). The final features are split in halves that go
    through temporal kernels 3 and 5 respectively (same padding).
    """

    def __init__(self, cin, cout=None, growth=32, n_layers=2):
        super().__init__()
        cout = cin if cout is None else cout
        if cout % 2:
            raise ConfigurationError(f"TDense output channels must be even, got {cout}")
        self.cin, self.cout = cin, cout
        self.layers = nn.ModuleList(
            nn.Conv3d(cin + i * growth, growth, (1, 3, 3), padding=(0, 1, 1)) for i in range(n_layers)
        )
        self.squeeze = nn.Conv3d(cin + n_layers * growth, cout, 1)
        half = cout // 2
        self.temporal3 = nn.Conv3d(half, half, (3, 1, 1), padding=(1, 0, 0))
        self.temporal5 = nn.Conv3d(half, half, (5, 1, 1), padding=(2, 0, 0))

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(F.leaky_relu(layer(torch.cat(feats, dim=1)), 0.1))
        y = F.leaky_relu(self.squeeze(torch.cat(feats, dim=1)), 0.1)
        a, b = y.chunk(2, dim=1)
        y = torch.cat([self.temporal3(a), self.temporal5(b)], dim=1)
        return x + y if self.cin == self.cout else y


def affine_fuse(f, s, tdense):
    """``f * alpha + beta`` with ``alpha || beta = tdense(s)`` along channels."""
    if f.shape[-2:] != s.shape[-2:] or f.shape[2] != s.shape[2]:
        raise InputError(f"latent grid {tuple(f.shape[2:])} does not match analytic grid {tuple(s.shape[2:])}")
    alpha, beta = tdense(s).chunk(2, dim=1)
    return f * alpha + beta


class DownUpFuse(nn.Module):
    """``up + down * sigmoid(attn(down, up))``."""

    def __init__(self, channels, groups=8):
        super().__init__()
        self.group_conv = nn.Conv2d(2 * channels, channels, 3, padding=1, groups=groups)
        self.pointwise = nn.Conv2d(channels, channels, 1)

    def mask(self, down, up):
        return torch.sigmoid(self.pointwise(self.group_conv(torch.cat([down, up], dim=1))))

    def forward(self, down, up):
        if down.shape != up.shape:
            raise InputError(f"down/up shapes differ: {tuple(down.shape)} vs {tuple(up.shape)}")
        return up + down * self.mask(down, up)


class RNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or RNetConfig()
        cfg = self.config
        c0 = 3 * SHUFFLE * SHUFFLE
        c1, cf = cfg.mid_channels, cfg.latent_channels
        self.encoder = EncoderDown(c0, c1, cf)
        self.tdense = nn.ModuleList(TDense(cf, cf, cfg.growth) for _ in range(cfg.n_tdense))
        self.affine = TDense(cfg.analytic_channels, 2 * cf, cfg.growth)
        self.up1 = nn.Conv2d(cf, c1 * 4, 3, padding=1)
        self.fuse1 = DownUpFuse(c1, cfg.fuse_groups)
        self.up2 = nn.Conv2d(c1, c0 * 4, 3, padding=1)
        self.fuse2 = DownUpFuse(c0, cfg.fuse_groups)
        self.out = nn.Conv2d(c0, c0, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def latent(self, x_dec):
        """(B, T, 3, H, W) -> latent (B, C_f, T, H/16, W/16) plus skips."""
        b, t = x_dec.shape[:2]
        e0 = pixel_shuffle_down(x_dec.flatten(0, 1))
        e2, e1 = self.encoder(e0, return_skips=True)
        f = e2.view(b, t, *e2.shape[1:]).transpose(1, 2)
        for blk in self.tdense:
            f = blk(f)
        return f, (e0, e1)

    def forward(self, x_dec, s=None):
        if x_dec.dim() != 5:
            raise InputError(f"expected (B, T, C, H, W) clips, got shape {tuple(x_dec.shape)}")
        b, t, c, h, w = x_dec.shape
        if h % 16 or w % 16:
            raise InputError(f"R-Net input must be a multiple of 16, got {h}x{w}")
        f, (e0, e1) = self.latent(x_dec)
        if s is not None:
            f = affine_fuse(f, s, self.affine)
        g = f.transpose(1, 2).flatten(0, 1)
        g = F.leaky_relu(F.pixel_shuffle(self.up1(g), 2), 0.1)
        g = self.fuse1(e1, g)
        g = F.leaky_relu(F.pixel_shuffle(self.up2(g), 2), 0.1)
        g = self.fuse2(e0, g)
        res = pixel_shuffle_up(self.out(g)).view(b, t, c, h, w)
        return torch.clamp(x_dec + res, 0.0, 1.0)
