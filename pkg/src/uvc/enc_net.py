"""Analytic-stream encoder.

Two pathways (frame and difference map) are downsampled in four stride-2
stages. After each stage a difference-guided fusion module (D-GFM) gates the
frame features with an attention map, filters them with per-region kernels
picked from a per-frame kernel table, and feeds the gated features back
into the difference pathway. A grouped 3D CNN then aggregates frames into
the analytic feature.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError

KSIZE = 5
KERNEL_MODES = ("ada", "fixkt", "plain")


@dataclass
class EncNetConfig:
    widths: tuple = (32, 64, 96, 128)
    n_kernels: int = 8
    analytic_channels: int = 128
    att_groups: int = 8
    mlp_hidden: tuple = (256, 512)
    temporal_kernel: int = 5
    temporal_groups: int = 32
    t_sm: float = 1.0
    use_diff: bool = True
    kernel_mode: str = "ada"

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.mlp_hidden = tuple(self.mlp_hidden)
        if len(self.widths) != 4:
            raise ConfigurationError("Enc-Net has exactly four stages")
        if self.kernel_mode not in KERNEL_MODES:
            raise ConfigurationError(f"kernel_mode must be one of {KERNEL_MODES}")
        if self.n_kernels < 1:
            raise ConfigurationError("n_kernels must be at least 1")
        if self.t_sm <= 0:
            raise ConfigurationError("t_sm must be positive")
        for w in self.widths:
            if w % self.att_groups:
                raise ConfigurationError(f"stage width {w} not divisible by att_groups={self.att_groups}")
        g = self.temporal_groups
        if self.widths[-1] % g or self.analytic_channels % g:
            raise ConfigurationError(
                f"temporal aggregation needs channels divisible by {g}: "
                f"got {self.widths[-1]} -> {self.analytic_channels}"
            )

    def to_dict(self):
        return asdict(self)


def kernel_weights(logits, mode="soft", t_sm=1.0):
    """Per-position mixing weights over the N table kernels, (B, N, H, W)."""
    if mode == "soft":
        return torch.softmax(logits / t_sm, dim=1)
    if mode == "hard":
        idx = logits.argmax(dim=1)
        return F.one_hot(idx, logits.shape[1]).permute(0, 3, 1, 2).to(logits.dtype)
    raise InputError(f"unknown LUT mode {mode!r}")


def assemble_adak(table, logits, mode="soft", t_sm=1.0):
    """Inflate a kernel table into a per-pixel kernel field.

    ``table`` is (B, N, C, 5, 5), ``logits`` (B, N, H, W); returns
    (B, C, H, W, 5, 5).
    """
    if table.shape[1] != logits.shape[1]:
        raise InputError(f"table has N={table.shape[1]} kernels, index map has {logits.shape[1]}")
    w = kernel_weights(logits, mode, t_sm)
    return torch.einsum("bnhw,bncij->bchwij", w, table)


def pixel_adaptive_conv(x, adak):
    """Depth-wise convolution with a distinct 5x5 kernel at every pixel.

    ``x`` is (B, C, H, W), ``adak`` (B, C, H, W, 5, 5); zero padding.
    """
    b, c, h, w = x.shape
    if adak.shape[:4] != (b, c, h, w):
        raise InputError(f"kernel field {tuple(adak.shape)} does not match input {tuple(x.shape)}")
    k = adak.shape[-1]
    cols = F.unfold(x, k, padding=k // 2).view(b, c, k * k, h, w)
    return (cols * adak.reshape(b, c, h, w, k * k).permute(0, 1, 4, 2, 3)).sum(dim=2)


def adaptive_kernel_conv(x, table, weights):
    """Same result as ``pixel_adaptive_conv(x, assemble_adak(...))`` without
    materialising the per-pixel kernels: run N depth-wise convolutions and
    mix them with the per-position weights.
    """
    b, c, h, w = x.shape
    n = table.shape[1]
    k = table.shape[-1]
    # out channel (b, c, n) reads input channel (b, c)
    kern = table.permute(0, 2, 1, 3, 4).reshape(b * c * n, 1, k, k)
    y = F.conv2d(x.reshape(1, b * c, h, w), kern, padding=k // 2, groups=b * c)
    y = y.view(b, c, n, h, w)
    return (y * weights.unsqueeze(1)).sum(dim=2)


class DownStage(nn.Module):
    """Stride-2 conv followed by a 3x3 conv; halves H and W."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise InputError(f"down_stage needs even spatial size, got {tuple(x.shape[-2:])}")
        return self.conv2(F.leaky_relu(self.conv1(x), 0.1))


class DGFM(nn.Module):
    def __init__(self, channels, n_kernels=8, att_groups=8, mlp_hidden=(256, 512),
                 kernel_mode="ada", use_diff=True, t_sm=1.0):
        super().__init__()
        c = channels
        self.channels = c
        self.n_kernels = n_kernels
        self.kernel_mode = kernel_mode
        self.use_diff = use_diff
        self.t_sm = t_sm
        self.lut_mode = "auto"
        att_in = 2 * c if use_diff else c
        self.att = nn.Sequential(
            nn.Conv2d(att_in, c, 3, padding=1, groups=att_groups),
            nn.LeakyReLU(0.1),
            nn.Conv2d(c, c, 3, padding=1, groups=att_groups),
        )
        if kernel_mode == "plain":
            self.plain = nn.Conv2d(c, c, KSIZE, padding=KSIZE // 2, groups=att_groups)
        else:
            n_out = n_kernels * c * KSIZE * KSIZE
            if kernel_mode == "ada":
                h1, h2 = mlp_hidden
                self.mlp = nn.Sequential(
                    nn.Linear(c, h1), nn.LeakyReLU(0.1),
                    nn.Linear(h1, h2), nn.LeakyReLU(0.1),
                    nn.Linear(h2, n_out),
                )
                last = self.mlp[-1]
                with torch.no_grad():
                    last.weight.mul_(0.1)
                    last.bias.copy_(_near_identity_table(n_kernels, c).flatten())
            else:
                self.fixed_table = nn.Parameter(_near_identity_table(n_kernels, c))
            self.conv2 = nn.Conv2d(c, n_kernels, 3, padding=1)
        if use_diff:
            self.conv1 = nn.Sequential(nn.Conv2d(c, c, 1), nn.LeakyReLU(0.1), nn.Conv2d(c, c, 1))

    def attention(self, x_down, d_down=None):
        inp = torch.cat([x_down, d_down], dim=1) if self.use_diff else x_down
        return torch.sigmoid(self.att(inp))

    def kernel_table(self, x_enh):
        b = x_enh.shape[0]
        if self.kernel_mode == "ada":
            pooled = x_enh.mean(dim=(2, 3))
            return self.mlp(pooled).view(b, self.n_kernels, self.channels, KSIZE, KSIZE)
        return self.fixed_table.unsqueeze(0).expand(b, -1, -1, -1, -1)

    def index_map(self, x_enh):
        return self.conv2(x_enh)

    def _mode(self):
        if self.lut_mode != "auto":
            return self.lut_mode
        return "soft" if self.training else "hard"

    def forward(self, x_down, d_down=None):
        m = self.attention(x_down, d_down)
        x_enh = x_down * m
        if self.kernel_mode == "plain":
            x_next = self.plain(x_enh)
        else:
            w = kernel_weights(self.index_map(x_enh), self._mode(), self.t_sm)
            x_next = adaptive_kernel_conv(x_enh, self.kernel_table(x_enh), w)
        d_next = d_down + self.conv1(x_enh) if self.use_diff else None
        return x_next, d_next


def _near_identity_table(n, c):
    t = torch.randn(n, c, KSIZE, KSIZE) * 0.05
    t[:, :, KSIZE // 2, KSIZE // 2] += 1.0
    return t


class TemporalAggregate(nn.Module):
    def __init__(self, cin, cout, kernel=5, groups=32):
        super().__init__()
        if cin % groups or cout % groups:
            raise ConfigurationError(f"channels {cin}->{cout} not divisible by groups={groups}")
        p = kernel // 2
        self.conv1 = nn.Conv3d(cin, cout, kernel, padding=p, groups=groups)
        self.conv2 = nn.Conv3d(cout, cout, kernel, padding=p, groups=groups)
        for conv in (self.conv1, self.conv2):
            nn.init.kaiming_normal_(conv.weight, a=0.1, nonlinearity="leaky_relu")
            nn.init.zeros_(conv.bias)

    def forward(self, feats):
        """``feats`` is (B, C, T, h, w); returns (B, C_s, T, h, w)."""
        return self.conv2(F.leaky_relu(self.conv1(feats), 0.1))


class EncNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or EncNetConfig()
        cfg = self.config
        chans = (3,) + cfg.widths
        self.down_x = nn.ModuleList(DownStage(chans[i], chans[i + 1]) for i in range(4))
        if cfg.use_diff:
            self.down_d = nn.ModuleList(DownStage(chans[i], chans[i + 1]) for i in range(4))
        self.fuse = nn.ModuleList(
            DGFM(w, cfg.n_kernels, cfg.att_groups, cfg.mlp_hidden, cfg.kernel_mode, cfg.use_diff, cfg.t_sm)
            for w in cfg.widths
        )
        # the fused stages shrink activations roughly 100x at init; without this S rounds to all zeros
        self.norm = nn.GroupNorm(cfg.temporal_groups, cfg.widths[-1])
        self.temporal = TemporalAggregate(cfg.widths[-1], cfg.analytic_channels,
                                          cfg.temporal_kernel, cfg.temporal_groups)

    def set_lut_mode(self, mode):
        """``auto`` (soft while training, hard in eval), ``soft`` or ``hard``."""
        for f in self.fuse:
            f.lut_mode = mode

    def frame_features(self, x, d=None):
        """Run the four fused stages on (N, 3, H, W) frames; returns x_4."""
        for i in range(4):
            xd = self.down_x[i](x)
            dd = self.down_d[i](d) if self.config.use_diff else None
            x, d = self.fuse[i](xd, dd)
        return x

    def forward(self, x, d):
        """``x``, ``d`` are (B, T, 3, H, W); returns S as (B, C_s, T, H/16, W/16)."""
        if x.dim() != 5:
            raise InputError(f"expected (B, T, C, H, W) clips, got shape {tuple(x.shape)}")
        if self.config.use_diff and d.shape != x.shape:
            raise InputError(f"frame {tuple(x.shape)} and difference {tuple(d.shape)} shapes differ")
        b, t, c, h, w = x.shape
        if h % 16 or w % 16:
            raise InputError(f"Enc-Net input must be a multiple of 16, got {h}x{w}")
        flat_d = d.reshape(b * t, c, h, w) if self.config.use_diff else None
        x4 = self.frame_features(x.reshape(b * t, c, h, w), flat_d)
        x4 = self.norm(x4).view(b, t, *x4.shape[1:]).transpose(1, 2)
        return self.temporal(x4)
