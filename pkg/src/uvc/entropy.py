"""Quantisation, factorized entropy model and analytic-stream coding."""

import hashlib

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import coder
from .errors import InputError, IntegrityError, NumericalError

ALPHABET_LO = -64
ALPHABET_HI = 63
FREQ_TOTAL = 1 << 16


def round_half_away(x):
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(s, mode="round", generator=None):
    """``noise`` adds U(-0.5, 0.5); ``round`` rounds half away from zero."""
    if mode == "noise":
        u = torch.rand(s.shape, generator=generator, dtype=s.dtype, device=s.device)
        return s + (u - 0.5)
    if mode == "round":
        return round_half_away(s)
    raise InputError(f"unknown quantisation mode {mode!r}")


class FactorizedEntropyModel(nn.Module):
    """Per-channel learned CDF built from monotone affine/tanh layers.

    The cumulative is ``sigmoid(g_c(x))`` where ``g_c`` composes ``K``
    layers whose matrices are softplus-constrained positive, so the CDF is
    non-decreasing in ``x``.
    """

    def __init__(self, channels, filters=(3, 3, 3), init_scale=10.0, likelihood_bound=1e-9):
        super().__init__()
        self.channels = int(channels)
        self.filters = tuple(int(f) for f in filters)
        self.likelihood_bound = float(likelihood_bound)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1 / (len(self.filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(self.filters) + 1):
            init = np.log(np.expm1(1 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), float(init))))
            self.biases.append(nn.Parameter(torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)))
            if i < len(self.filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def logits_cumulative(self, x):
        """``x`` is (C, 1, N); returns the CDF logits with the same shape."""
        logits = x
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            logits = torch.matmul(F.softplus(m), logits) + b
            if i < len(self.factors):
                logits = logits + torch.tanh(self.factors[i]) * torch.tanh(logits)
        return logits

    def _to_channels(self, y):
        # (B, C, ...) -> (C, 1, N)
        if y.dim() < 2 or y.shape[1] != self.channels:
            raise InputError(f"expected {self.channels} channels at dim 1, got shape {tuple(y.shape)}")
        perm = (1, 0) + tuple(range(2, y.dim()))
        return y.permute(*perm).reshape(self.channels, 1, -1)

    def _from_channels(self, v, shape):
        perm_shape = (shape[1], shape[0]) + tuple(shape[2:])
        v = v.reshape(perm_shape)
        perm = (1, 0) + tuple(range(2, len(shape)))
        return v.permute(*perm)

    def likelihood(self, y):
        """PMF of each (quantised or noisy) value of a (B, C, ...) tensor."""
        v = self._to_channels(y)
        lower = self.logits_cumulative(v - 0.5)
        upper = self.logits_cumulative(v + 0.5)
        sign = -torch.sign(lower + upper).detach()
        lik = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        lik = torch.clamp(lik, min=self.likelihood_bound)
        return self._from_channels(lik, y.shape)

    @torch.no_grad()
    def pmf_table(self, lo=ALPHABET_LO, hi=ALPHABET_HI):
        """(C, hi-lo+1) in-range PMF and (C,) escape mass, in float64."""
        dtype = torch.float64
        pts = torch.arange(lo, hi + 2, dtype=dtype) - 0.5
        v = pts.reshape(1, 1, -1).expand(self.channels, 1, -1)
        model = self if self.matrices[0].dtype == dtype else _as_double(self)
        logits = model.logits_cumulative(v)[:, 0, :]
        cdf = torch.sigmoid(logits)
        # take differences on the side of the sigmoid with more precision
        tail = torch.sigmoid(-logits)
        pmf = torch.where(
            (logits[:, 1:] + logits[:, :-1]) > 0,
            tail[:, :-1] - tail[:, 1:],
            cdf[:, 1:] - cdf[:, :-1],
        )
        escape = cdf[:, 0] + tail[:, -1]
        return pmf.clamp_min(0).numpy(), escape.numpy()

    def quantized_cdfs(self):
        pmf, escape = self.pmf_table()
        probs = np.concatenate([pmf, escape[:, None]], axis=1)
        nsym = probs.shape[1]
        freqs = 1 + np.floor(probs * (FREQ_TOTAL - nsym)).astype(np.int64)
        rows = np.arange(self.channels)
        freqs[rows, np.argmax(freqs, axis=1)] += FREQ_TOTAL - freqs.sum(axis=1)
        cdfs = np.zeros((self.channels, nsym + 1), dtype=np.uint32)
        cdfs[:, 1:] = np.cumsum(freqs, axis=1)
        return cdfs

    def model_hash(self):
        h = hashlib.sha256()
        h.update(np.int64([ALPHABET_LO, ALPHABET_HI, self.channels]).tobytes())
        h.update(self.quantized_cdfs().tobytes())
        return h.hexdigest()[:16]


def _as_double(model):
    clone = FactorizedEntropyModel(model.channels, model.filters, likelihood_bound=model.likelihood_bound)
    clone.load_state_dict(model.state_dict())
    return clone.double()


def estimate_rate(s_q, model):
    """Total bits ``sum(-log2 pmf)`` for a (B, C, ...) tensor; differentiable."""
    if s_q.numel() == 0:
        return s_q.new_zeros(())
    lik = model.likelihood(s_q)
    bits = -torch.log2(lik)
    if not torch.isfinite(bits).all():
        bad = (~torch.isfinite(bits)).transpose(0, 1).reshape(model.channels, -1).any(dim=1)
        raise NumericalError(f"non-finite PMF in channel(s) {torch.nonzero(bad).flatten().tolist()}")
    return bits.sum()


def _channel_index(shape):
    c = shape[0]
    n = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    return np.repeat(np.arange(c, dtype=np.int32), n)


def compress(s_round, model):
    """Entropy-code an integer (C, T, h, w) feature to bytes."""
    s = s_round.detach().cpu().numpy() if torch.is_tensor(s_round) else np.asarray(s_round)
    if s.size == 0:
        return b""
    if s.shape[0] != model.channels:
        raise InputError(f"feature has {s.shape[0]} channels, model has {model.channels}")
    if not np.all(s == np.round(s)):
        raise InputError("compress expects integer-valued features")
    return coder.encode_symbols(s.astype(np.int32).ravel(), _channel_index(s.shape), model.quantized_cdfs(), ALPHABET_LO)


def decompress(data, shape, model, model_hash=None):
    shape = tuple(int(d) for d in shape)
    if model_hash is not None and model_hash != model.model_hash():
        raise IntegrityError(f"entropy model hash mismatch: stream {model_hash}, local {model.model_hash()}")
    if int(np.prod(shape)) == 0:
        return torch.zeros(shape)
    if shape[0] != model.channels:
        raise InputError(f"shape {shape} does not match model channels {model.channels}")
    vals = coder.decode_symbols(bytes(data), _channel_index(shape), model.quantized_cdfs(), ALPHABET_LO)
    return torch.from_numpy(vals.astype(np.float32).reshape(shape))
