# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled range coder kernels. Byte-for-byte identical to ``_coder_py``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint16_t, uint32_t, uint64_t, int32_t
from libc.stdlib cimport malloc, realloc, free

from .errors import DecodeError

cnp.import_array()

DEF TOP = 16777216
DEF PROB_BITS = 11
DEF PROB_ONE = 2048
DEF MOVE_BITS = 5
DEF FREQ_BITS = 16

DEF CTX_DC_ZERO = 0
DEF CTX_DC_SIGN = 1
DEF CTX_DC_EG = 2
DEF CTX_CBF = 18
DEF CTX_LAST = 19
DEF CTX_SIG = 83
DEF CTX_GT1 = 147
DEF CTX_AC_EG = 149
DEF N_CTX = 165
DEF EG_CTX = 16
DEF MAX_EG_PREFIX = 32


cdef struct Enc:
    uint64_t low
    uint32_t range
    uint8_t cache
    uint64_t cache_size
    int first
    uint8_t *buf
    size_t n
    size_t cap


cdef struct Dec:
    const uint8_t *data
    size_t size
    size_t pos
    uint32_t range
    uint32_t code
    uint32_t r
    int err


cdef int enc_init(Enc *e) except -1:
    e.low = 0
    e.range = 0xFFFFFFFF
    e.cache = 0
    e.cache_size = 1
    e.first = 1
    e.n = 0
    e.cap = 1024
    e.buf = <uint8_t *> malloc(e.cap)
    if e.buf == NULL:
        raise MemoryError()
    return 0


cdef inline int enc_put(Enc *e, uint8_t b) except -1:
    cdef uint8_t *nb
    if e.n == e.cap:
        nb = <uint8_t *> realloc(e.buf, e.cap * 2)
        if nb == NULL:
            raise MemoryError()
        e.buf = nb
        e.cap *= 2
    e.buf[e.n] = b
    e.n += 1
    return 0


cdef inline int shift_low(Enc *e) except -1:
    cdef uint8_t temp
    cdef uint8_t carry
    if <uint32_t> e.low < <uint32_t> 0xFF000000 or (e.low >> 32) != 0:
        carry = <uint8_t> (e.low >> 32)
        temp = e.cache
        while True:
            if e.first:
                e.first = 0
            else:
                enc_put(e, <uint8_t> (temp + carry))
            temp = 0xFF
            e.cache_size -= 1
            if e.cache_size == 0:
                break
        e.cache = <uint8_t> ((e.low >> 24) & 0xFF)
    e.cache_size += 1
    e.low = (e.low & 0x00FFFFFF) << 8
    return 0


cdef inline int enc_norm(Enc *e) except -1:
    while e.range < TOP:
        e.range <<= 8
        shift_low(e)
    return 0


cdef inline int enc_bit(Enc *e, uint16_t *probs, int i, int b) except -1:
    cdef uint32_t p = probs[i]
    cdef uint32_t bound = (e.range >> PROB_BITS) * p
    if b:
        e.low += bound
        e.range -= bound
        probs[i] = <uint16_t> (p - (p >> MOVE_BITS))
    else:
        e.range = bound
        probs[i] = <uint16_t> (p + ((PROB_ONE - p) >> MOVE_BITS))
    enc_norm(e)
    return 0


cdef inline int enc_direct(Enc *e, uint64_t value, int nbits) except -1:
    cdef int k
    for k in range(nbits - 1, -1, -1):
        e.range >>= 1
        if (value >> k) & 1:
            e.low += e.range
        enc_norm(e)
    return 0


cdef inline int enc_freq(Enc *e, uint32_t cum, uint32_t f) except -1:
    cdef uint32_t r = e.range >> FREQ_BITS
    e.low += <uint64_t> r * cum
    e.range = r * f
    enc_norm(e)
    return 0


cdef bytes enc_finish(Enc *e):
    cdef int k
    try:
        for k in range(5):
            shift_low(e)
        return e.buf[:e.n]
    finally:
        free(e.buf)
        e.buf = NULL


cdef inline int dec_byte(Dec *d) except -1:
    if d.pos >= d.size:
        raise DecodeError("truncated range-coded stream")
    d.pos += 1
    return d.data[d.pos - 1]


cdef int dec_init(Dec *d, const uint8_t *data, size_t size) except -1:
    cdef int k
    d.data = data
    d.size = size
    d.pos = 0
    d.range = 0xFFFFFFFF
    d.code = 0
    for k in range(4):
        d.code = (d.code << 8) | <uint32_t> dec_byte(d)
    return 0


cdef inline int dec_norm(Dec *d) except -1:
    while d.range < TOP:
        d.range <<= 8
        d.code = (d.code << 8) | <uint32_t> dec_byte(d)
    return 0


cdef inline int dec_bit(Dec *d, uint16_t *probs, int i) except -1:
    cdef uint32_t p = probs[i]
    cdef uint32_t bound = (d.range >> PROB_BITS) * p
    cdef int b
    if d.code < bound:
        d.range = bound
        probs[i] = <uint16_t> (p + ((PROB_ONE - p) >> MOVE_BITS))
        b = 0
    else:
        d.code -= bound
        d.range -= bound
        probs[i] = <uint16_t> (p - (p >> MOVE_BITS))
        b = 1
    dec_norm(d)
    return b


cdef inline int dec_direct(Dec *d, int nbits, uint64_t *out) except -1:
    cdef uint64_t v = 0
    cdef int k
    for k in range(nbits):
        d.range >>= 1
        if d.code >= d.range:
            d.code -= d.range
            v = (v << 1) | 1
        else:
            v <<= 1
        dec_norm(d)
    out[0] = v
    return 0


cdef inline int enc_eg(Enc *e, uint16_t *probs, int base, uint32_t m) except -1:
    cdef uint64_t n = <uint64_t> m + 1
    cdef int k = 0
    cdef int i
    while (n >> (k + 1)) != 0:
        k += 1
    for i in range(k):
        enc_bit(e, probs, base + (i if i < EG_CTX - 1 else EG_CTX - 1), 1)
    enc_bit(e, probs, base + (k if k < EG_CTX - 1 else EG_CTX - 1), 0)
    if k:
        enc_direct(e, n, k)
    return 0


cdef inline int dec_eg(Dec *d, uint16_t *probs, int base, uint32_t *out) except -1:
    cdef int k = 0
    cdef uint64_t low = 0
    while dec_bit(d, probs, base + (k if k < EG_CTX - 1 else EG_CTX - 1)):
        k += 1
        if k > MAX_EG_PREFIX:
            raise DecodeError("corrupt Exp-Golomb prefix")
    if k:
        dec_direct(d, k, &low)
    out[0] = <uint32_t> (((<uint64_t> 1 << k) | low) - 1)
    return 0


def encode_blocks(coeffs):
    """Entropy-code an (n, 64) int32 array of zig-zagged block coefficients."""
    cdef int32_t[:, ::1] c = np.ascontiguousarray(coeffs, dtype=np.int32)
    cdef uint16_t probs[N_CTX]
    cdef Enc e
    cdef Py_ssize_t j
    cdef int pos, last, node, k, b, sym
    cdef int32_t v, dc
    cdef uint32_t a
    for k in range(N_CTX):
        probs[k] = PROB_ONE >> 1
    enc_init(&e)
    try:
        for j in range(c.shape[0]):
            dc = c[j, 0]
            enc_bit(&e, probs, CTX_DC_ZERO, dc != 0)
            if dc:
                enc_bit(&e, probs, CTX_DC_SIGN, dc < 0)
                enc_eg(&e, probs, CTX_DC_EG, <uint32_t> (dc if dc > 0 else -dc) - 1)
            last = 0
            for pos in range(63, 0, -1):
                if c[j, pos]:
                    last = pos
                    break
            enc_bit(&e, probs, CTX_CBF, last != 0)
            if not last:
                continue
            node = 1
            sym = last - 1
            for k in range(5, -1, -1):
                b = (sym >> k) & 1
                enc_bit(&e, probs, CTX_LAST + node, b)
                node = (node << 1) | b
            for pos in range(1, last + 1):
                v = c[j, pos]
                if pos < last:
                    enc_bit(&e, probs, CTX_SIG + pos, v != 0)
                if v:
                    a = <uint32_t> (v if v > 0 else -v)
                    enc_bit(&e, probs, CTX_GT1 + (pos >= 6), a > 1)
                    if a > 1:
                        enc_eg(&e, probs, CTX_AC_EG, a - 2)
                    enc_direct(&e, v < 0, 1)
    except BaseException:
        free(e.buf)
        raise
    return enc_finish(&e)


def decode_blocks(const uint8_t[::1] data, Py_ssize_t nblocks):
    out_arr = np.zeros((nblocks, 64), dtype=np.int32)
    if nblocks == 0:
        return out_arr
    cdef int32_t[:, ::1] out = out_arr
    cdef uint16_t probs[N_CTX]
    cdef Dec d
    cdef Py_ssize_t j
    cdef int pos, last, node, k, neg
    cdef uint32_t a
    cdef uint64_t sgn
    for k in range(N_CTX):
        probs[k] = PROB_ONE >> 1
    dec_init(&d, &data[0] if data.shape[0] else NULL, data.shape[0])
    for j in range(nblocks):
        if dec_bit(&d, probs, CTX_DC_ZERO):
            neg = dec_bit(&d, probs, CTX_DC_SIGN)
            dec_eg(&d, probs, CTX_DC_EG, &a)
            a += 1
            out[j, 0] = -<int32_t> a if neg else <int32_t> a
        if dec_bit(&d, probs, CTX_CBF):
            node = 1
            for k in range(6):
                node = (node << 1) | dec_bit(&d, probs, CTX_LAST + node)
            last = (node & 63) + 1
            if last > 63:
                raise DecodeError("corrupt last-position symbol")
            for pos in range(1, last + 1):
                if pos < last and not dec_bit(&d, probs, CTX_SIG + pos):
                    continue
                a = 1
                if dec_bit(&d, probs, CTX_GT1 + (pos >= 6)):
                    dec_eg(&d, probs, CTX_AC_EG, &a)
                    a += 2
                dec_direct(&d, 1, &sgn)
                out[j, pos] = -<int32_t> a if sgn else <int32_t> a
    return out_arr


def encode_symbols(values, cdf_index, cdfs, int lo):
    """Code integers against static quantised CDF tables (see ``_coder_py``)."""
    cdef int32_t[::1] vals = np.ascontiguousarray(values, dtype=np.int32).ravel()
    cdef int32_t[::1] idx = np.ascontiguousarray(cdf_index, dtype=np.int32).ravel()
    cdef uint32_t[:, ::1] tab = np.ascontiguousarray(cdfs, dtype=np.uint32)
    if vals.shape[0] == 0:
        return b""
    cdef int nsym = tab.shape[1] - 1
    cdef int esc = nsym - 1
    cdef int hi = lo + esc - 1
    cdef Enc e
    cdef Py_ssize_t j
    cdef int32_t v
    cdef int s, t, k
    cdef uint64_t u, n
    enc_init(&e)
    try:
        for j in range(vals.shape[0]):
            v = vals[j]
            t = idx[j]
            s = v - lo if (v >= lo and v <= hi) else esc
            enc_freq(&e, tab[t, s], tab[t, s + 1] - tab[t, s])
            if s == esc:
                if v < lo:
                    enc_direct(&e, 1, 1)
                    u = <uint64_t> (<long long> lo - v - 1)
                else:
                    enc_direct(&e, 0, 1)
                    u = <uint64_t> (<long long> v - hi - 1)
                n = u + 1
                k = 0
                while (n >> (k + 1)) != 0:
                    k += 1
                enc_direct(&e, 0, k)
                enc_direct(&e, n, k + 1)
    except BaseException:
        free(e.buf)
        raise
    return enc_finish(&e)


def decode_symbols(const uint8_t[::1] data, cdf_index, cdfs, int lo):
    cdef int32_t[::1] idx = np.ascontiguousarray(cdf_index, dtype=np.int32).ravel()
    cdef uint32_t[:, ::1] tab = np.ascontiguousarray(cdfs, dtype=np.uint32)
    out_arr = np.zeros(idx.shape[0], dtype=np.int32)
    if idx.shape[0] == 0:
        return out_arr
    cdef int32_t[::1] out = out_arr
    cdef int nsym = tab.shape[1] - 1
    cdef int esc = nsym - 1
    cdef int hi = lo + esc - 1
    cdef Dec d
    cdef Py_ssize_t j
    cdef int t, a, b, m, k
    cdef uint32_t target
    cdef uint64_t bit, low
    dec_init(&d, &data[0] if data.shape[0] else NULL, data.shape[0])
    for j in range(idx.shape[0]):
        t = idx[j]
        d.r = d.range >> FREQ_BITS
        target = d.code // d.r
        if target > 65535:
            target = 65535
        a = 0
        b = nsym
        while b - a > 1:
            m = (a + b) >> 1
            if tab[t, m] <= target:
                a = m
            else:
                b = m
        d.code -= d.r * tab[t, a]
        d.range = d.r * (tab[t, a + 1] - tab[t, a])
        dec_norm(&d)
        if a == esc:
            dec_direct(&d, 1, &bit)
            k = 0
            while True:
                dec_direct(&d, 1, &low)
                if low:
                    break
                k += 1
                if k > MAX_EG_PREFIX:
                    raise DecodeError("corrupt escape code")
            low = 0
            if k:
                dec_direct(&d, k, &low)
            low = ((<uint64_t> 1 << k) | low) - 1
            if bit:
                out[j] = <int32_t> (<long long> lo - <long long> low - 1)
            else:
                out[j] = <int32_t> (<long long> hi + <long long> low + 1)
        else:
            out[j] = lo + a
    return out_arr
