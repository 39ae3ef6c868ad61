"""Pure-Python range coder kernels.

Reference implementation of the kernels in ``_coder.pyx``. Both produce
identical bytes; the compiled one is selected at import time by
:mod:`uvc.coder` when it is available.

The coder is a carry-less-output 32-bit range coder in the LZMA style
(byte-wise renormalisation, carry propagated through a cached byte). The
always-zero leading byte is not emitted.
"""

import numpy as np

from .errors import DecodeError

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
PROB_BITS = 11
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE >> 1
MOVE_BITS = 5
FREQ_BITS = 16

# block coder context layout
CTX_DC_ZERO = 0
CTX_DC_SIGN = 1
CTX_DC_EG = 2
CTX_CBF = 18
CTX_LAST = 19
CTX_SIG = 83
CTX_GT1 = 147
CTX_AC_EG = 149
N_CTX = 165
EG_CTX = 16
MAX_EG_PREFIX = 32


class _Encoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self.first = True

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                if self.first:
                    self.first = False
                else:
                    self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def _norm(self):
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()

    def bit(self, probs, i, b):
        p = probs[i]
        bound = (self.range >> PROB_BITS) * p
        if b:
            self.low += bound
            self.range -= bound
            probs[i] = p - (p >> MOVE_BITS)
        else:
            self.range = bound
            probs[i] = p + ((PROB_ONE - p) >> MOVE_BITS)
        self._norm()

    def direct(self, value, nbits):
        for k in range(nbits - 1, -1, -1):
            self.range >>= 1
            if (value >> k) & 1:
                self.low += self.range
            self._norm()

    def freq(self, cum, f):
        r = self.range >> FREQ_BITS
        self.low += r * cum
        self.range = r * f
        self._norm()

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class _Decoder:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self):
        if self.pos >= len(self.data):
            raise DecodeError("truncated range-coded stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _norm(self):
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def bit(self, probs, i):
        p = probs[i]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            self.range = bound
            probs[i] = p + ((PROB_ONE - p) >> MOVE_BITS)
            b = 0
        else:
            self.code -= bound
            self.range -= bound
            probs[i] = p - (p >> MOVE_BITS)
            b = 1
        self._norm()
        return b

    def direct(self, nbits):
        v = 0
        for _ in range(nbits):
            self.range >>= 1
            if self.code >= self.range:
                self.code -= self.range
                v = (v << 1) | 1
            else:
                v <<= 1
            self._norm()
        return v

    def freq_target(self):
        self._r = self.range >> FREQ_BITS
        t = self.code // self._r
        return min(t, (1 << FREQ_BITS) - 1)

    def freq_consume(self, cum, f):
        self.code -= self._r * cum
        self.range = self._r * f
        self._norm()


def _bitlen(n):
    return n.bit_length()


def _enc_eg(enc, probs, base, m):
    n = m + 1
    k = _bitlen(n) - 1
    for i in range(k):
        enc.bit(probs, base + min(i, EG_CTX - 1), 1)
    enc.bit(probs, base + min(k, EG_CTX - 1), 0)
    if k:
        enc.direct(n, k)


def _dec_eg(dec, probs, base):
    k = 0
    while dec.bit(probs, base + min(k, EG_CTX - 1)):
        k += 1
        if k > MAX_EG_PREFIX:
            raise DecodeError("corrupt Exp-Golomb prefix")
    n = 1
    if k:
        n = (1 << k) | dec.direct(k)
    return n - 1


def encode_blocks(coeffs):
    """Entropy-code an (n, 64) int32 array of zig-zagged block coefficients."""
    coeffs = np.ascontiguousarray(coeffs, dtype=np.int32)
    probs = [PROB_INIT] * N_CTX
    enc = _Encoder()
    for row in coeffs.tolist():
        dc = row[0]
        enc.bit(probs, CTX_DC_ZERO, dc != 0)
        if dc:
            enc.bit(probs, CTX_DC_SIGN, dc < 0)
            _enc_eg(enc, probs, CTX_DC_EG, abs(dc) - 1)
        last = 0
        for pos in range(63, 0, -1):
            if row[pos]:
                last = pos
                break
        enc.bit(probs, CTX_CBF, last != 0)
        if not last:
            continue
        node = 1
        sym = last - 1
        for k in range(5, -1, -1):
            b = (sym >> k) & 1
            enc.bit(probs, CTX_LAST + node, b)
            node = (node << 1) | b
        for pos in range(1, last + 1):
            v = row[pos]
            if pos < last:
                enc.bit(probs, CTX_SIG + pos, v != 0)
            if v:
                a = abs(v)
                enc.bit(probs, CTX_GT1 + (pos >= 6), a > 1)
                if a > 1:
                    _enc_eg(enc, probs, CTX_AC_EG, a - 2)
                enc.direct(v < 0, 1)
    return enc.finish()


def decode_blocks(data, nblocks):
    out = np.zeros((nblocks, 64), dtype=np.int32)
    if nblocks == 0:
        return out
    probs = [PROB_INIT] * N_CTX
    dec = _Decoder(data)
    for j in range(nblocks):
        row = [0] * 64
        if dec.bit(probs, CTX_DC_ZERO):
            neg = dec.bit(probs, CTX_DC_SIGN)
            a = _dec_eg(dec, probs, CTX_DC_EG) + 1
            row[0] = -a if neg else a
        if dec.bit(probs, CTX_CBF):
            node = 1
            for _ in range(6):
                node = (node << 1) | dec.bit(probs, CTX_LAST + node)
            last = (node & 63) + 1
            if last > 63:
                raise DecodeError("corrupt last-position symbol")
            for pos in range(1, last + 1):
                if pos < last and not dec.bit(probs, CTX_SIG + pos):
                    continue
                a = 1
                if dec.bit(probs, CTX_GT1 + (pos >= 6)):
                    a = _dec_eg(dec, probs, CTX_AC_EG) + 2
                row[pos] = -a if dec.direct(1) else a
        out[j] = row
    return out


def encode_symbols(values, cdf_index, cdfs, lo):
    """Code integers against static quantised CDF tables.

    ``cdfs`` is (n_tables, A + 2): cumulative frequencies summing to
    ``2**16`` over ``A`` in-range symbols ``lo .. lo + A - 1`` plus one
    escape symbol. Out-of-range values are sent as escape followed by a
    bypass-coded sign and order-0 Exp-Golomb overflow.
    """
    values = np.ascontiguousarray(values, dtype=np.int32).ravel()
    cdf_index = np.ascontiguousarray(cdf_index, dtype=np.int32).ravel()
    cdfs = np.ascontiguousarray(cdfs, dtype=np.uint32)
    if values.size == 0:
        return b""
    nsym = cdfs.shape[1] - 1
    esc = nsym - 1
    hi = lo + esc - 1
    tables = cdfs.tolist()
    enc = _Encoder()
    for v, t in zip(values.tolist(), cdf_index.tolist()):
        cdf = tables[t]
        s = v - lo if lo <= v <= hi else esc
        enc.freq(cdf[s], cdf[s + 1] - cdf[s])
        if s == esc:
            if v < lo:
                enc.direct(1, 1)
                u = lo - v - 1
            else:
                enc.direct(0, 1)
                u = v - hi - 1
            n = u + 1
            k = _bitlen(n) - 1
            enc.direct(0, k)
            enc.direct(n, k + 1)
    return enc.finish()


def decode_symbols(data, cdf_index, cdfs, lo):
    cdf_index = np.ascontiguousarray(cdf_index, dtype=np.int32).ravel()
    cdfs = np.ascontiguousarray(cdfs, dtype=np.uint32)
    out = np.zeros(cdf_index.size, dtype=np.int32)
    if cdf_index.size == 0:
        return out
    nsym = cdfs.shape[1] - 1
    esc = nsym - 1
    hi = lo + esc - 1
    tables = cdfs.tolist()
    dec = _Decoder(data)
    for j, t in enumerate(cdf_index.tolist()):
        cdf = tables[t]
        target = dec.freq_target()
        a, b = 0, nsym
        while b - a > 1:
            m = (a + b) >> 1
            if cdf[m] <= target:
                a = m
            else:
                b = m
        s = a
        dec.freq_consume(cdf[s], cdf[s + 1] - cdf[s])
        if s == esc:
            neg = dec.direct(1)
            k = 0
            while not dec.direct(1):
                k += 1
                if k > MAX_EG_PREFIX:
                    raise DecodeError("corrupt escape code")
            n = (1 << k) | dec.direct(k)
            u = n - 1
            out[j] = lo - u - 1 if neg else hi + u + 1
        else:
            out[j] = lo + s
    return out
