"""Self-supervised edge objective: Edge-Net, global edge descriptor and losses."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputError

PATCH = 16
GED_DIM = 128


class _ResDown(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1, stride=2)

    def forward(self, x):
        return F.leaky_relu(self.skip(x) + self.conv2(F.leaky_relu(self.conv1(x), 0.1)), 0.1)


class _ResUp(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.skip(x) + self.conv2(F.leaky_relu(self.conv1(x), 0.1)), 0.1)


class EdgeNet(nn.Module):
    """Residual encoder (downsampling x4), mirrored decoder, sigmoid output."""

    def __init__(self, channels=32):
        super().__init__()
        c = channels
        self.head = nn.Conv2d(3, c, 3, padding=1)
        self.down = nn.Sequential(_ResDown(c, c), _ResDown(c, 2 * c))
        self.up = nn.Sequential(_ResUp(2 * c, c), _ResUp(c, c))
        self.tail = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, clip):
        """(…, 3, H, W) -> (…, 1, H, W) in [0, 1]; H, W divisible by 4."""
        lead = clip.shape[:-3]
        x = clip.reshape(-1, *clip.shape[-3:])
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise InputError(f"Edge-Net needs H, W divisible by 4, got {tuple(x.shape[-2:])}")
        y = self.tail(self.up(self.down(F.leaky_relu(self.head(x), 0.1))))
        return torch.sigmoid(y).reshape(*lead, 1, *x.shape[-2:])


class FrameDescriptor(nn.Module):
    """Edge map -> 128-d frame descriptor.

    Each 16x16 patch is embedded by a two-layer MLP, a learnable positional
    token is added, then a residual block and spatial averaging.
    """

    def __init__(self, dim=GED_DIM, grid=(4, 4)):
        super().__init__()
        self.embed1 = nn.Conv2d(1, dim, PATCH, stride=PATCH)
        self.embed2 = nn.Conv2d(dim, dim, 1)
        self.pos = nn.Parameter(torch.randn(1, dim, *grid) * 0.02)
        self.res1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.res2 = nn.Conv2d(dim, dim, 3, padding=1)

    def positional(self, grid):
        if tuple(self.pos.shape[-2:]) == tuple(grid):
            return self.pos
        return F.interpolate(self.pos, size=grid, mode="bilinear", align_corners=False)

    def forward(self, edge):
        """(N, 1, H, W) -> (N, dim)."""
        h, w = edge.shape[-2:]
        if h % PATCH or w % PATCH:
            raise InputError(f"frame descriptor needs H, W divisible by {PATCH}, got {h}x{w}")
        z = self.embed2(F.leaky_relu(self.embed1(edge), 0.1))
        z = z + self.positional(z.shape[-2:])
        z = z + self.res2(F.leaky_relu(self.res1(z), 0.1))
        return z.mean(dim=(2, 3))


class GED(nn.Module):
    """Video-level global edge descriptor from per-frame descriptors.

    The temporal network uses replicate padding so that a clip of identical
    frames yields the single-frame descriptor.
    """

    def __init__(self, edge_net, dim=GED_DIM, grid=(4, 4)):
        super().__init__()
        self.edge_net = edge_net
        self.frame = FrameDescriptor(dim, grid)
        self.tconv1 = nn.Conv1d(dim, dim, 3, padding=1, padding_mode="replicate")
        self.tconv2 = nn.Conv1d(dim, dim, 3, padding=1, padding_mode="replicate")

    def temporal(self, frame_desc):
        """(B, T, dim) -> (B, dim)."""
        z = frame_desc.transpose(1, 2)
        z = self.tconv2(F.leaky_relu(self.tconv1(z), 0.1))
        return z.mean(dim=2)

    def from_edges(self, edges):
        """(B, T, 1, H, W) edge maps -> (B, dim)."""
        b, t = edges.shape[:2]
        d = self.frame(edges.flatten(0, 1)).view(b, t, -1)
        return self.temporal(d)

    def forward(self, clip):
        """(B, T, 3, H, W) -> (B, dim)."""
        return self.from_edges(self.edge_net(clip))


class ProjectionHead(nn.Module):
    def __init__(self, dim=GED_DIM, hidden=512, out=GED_DIM):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, out))

    def forward(self, g):
        return self.net(g)


def cosine(a, b, eps=1e-8):
    """Cosine similarity along the last dim; zero-norm vectors fall back to 0."""
    return (a * b).sum(-1) / torch.clamp(a.norm(dim=-1) * b.norm(dim=-1), min=eps)


def contrastive_loss(g_hat, g_pos, g_negs, tau=0.2, head=None):
    """Negated log-ratio of positive to negative similarities.

    ``g_hat`` and ``g_pos`` are (D,), ``g_negs`` is (K, D) with K >= 1. The
    denominator sums over the K negatives only.
    """
    if tau <= 0:
        raise InputError("tau must be positive")
    if g_negs.dim() != 2 or g_negs.shape[0] < 1:
        raise InputError("need at least one negative descriptor")
    if head is not None:
        g_hat, g_pos, g_negs = head(g_hat), head(g_pos), head(g_negs)
    pos = cosine(g_hat, g_pos) / tau
    neg = cosine(g_hat.unsqueeze(0), g_negs) / tau
    return torch.logsumexp(neg, dim=0) - pos


def batch_contrastive_loss(g_hat, g, tau=0.2, head=None):
    """Mean contrastive loss over a batch; negatives are the other clips."""
    bsz = g.shape[0]
    if bsz < 2:
        raise InputError("contrastive loss needs a batch of at least 2 clips")
    if head is not None:
        g_hat, g = head(g_hat), head(g)
    sim = cosine(g_hat.unsqueeze(1), g.unsqueeze(0)) / tau  # (B, B)
    pos = sim.diagonal()
    off = ~torch.eye(bsz, dtype=torch.bool, device=sim.device)
    neg = sim.masked_fill(~off, float("-inf"))
    return (torch.logsumexp(neg, dim=1) - pos).mean()


def edge_l2(e_hat, e):
    """L2 norm of an edge-map difference, per clip: (B, ...) -> (B,)."""
    diff = (e_hat - e).flatten(1)
    sq = (diff * diff).sum(dim=1)
    # sqrt with a zero subgradient at the origin
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq))


def local_edge_loss(x_hat, x, edge_net):
    """Mean over the batch of ``||Edge-Net(x_hat) - Edge-Net(x)||_2``."""
    if x_hat.shape != x.shape:
        raise InputError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    return edge_l2(edge_net(x_hat), edge_net(x)).mean()


def edge_loss(l_con, l_local):
    return l_con + l_local


_SOBEL_FLOOR = 1e-5
_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_edge(clip):
    """Sobel gradient magnitude, normalised to [0, 1] per frame.

    (…, C, H, W) -> (…, 1, H, W). Channels are averaged first; borders use
    replicate padding so flat frames give an all-zero map.
    """
    lead = clip.shape[:-3]
    x = clip.reshape(-1, *clip.shape[-3:]).mean(dim=1, keepdim=True)
    kx = _SOBEL_X.to(x.dtype).view(1, 1, 3, 3)
    ky = kx.transpose(-1, -2)
    xp = F.pad(x, (1, 1, 1, 1), mode="replicate")
    sq = F.conv2d(xp, kx) ** 2 + F.conv2d(xp, ky) ** 2
    mag = torch.where(sq > 0, torch.sqrt(torch.where(sq > 0, sq, torch.ones_like(sq))), torch.zeros_like(sq))
    peak = mag.amax(dim=(1, 2, 3), keepdim=True)
    # conv round-off on flat frames must not be stretched to full scale
    peak = torch.where(peak > _SOBEL_FLOOR, peak, torch.zeros_like(peak))
    out = torch.where(peak > 0, mag / torch.where(peak > 0, peak, torch.ones_like(peak)), torch.zeros_like(mag))
    return out.reshape(*lead, 1, *x.shape[-2:])


class SobelEdge(nn.Module):
    """Drop-in parameter-free replacement for :class:`EdgeNet`."""

    def forward(self, clip):
        return sobel_edge(clip)
