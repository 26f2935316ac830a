"""Counter-based random streams.

Every Monte Carlo sample owns a stream keyed by ``(seed, stream_index)``.
Words are produced by the Philox4x64-10 block cipher, so the value at any
position of any stream is a pure function of the key and a counter and
results do not depend on how samples are spread over workers.

Within one stream, independent sub-sequences are selected by a tag placed
in the second counter word:

* ``TAG_PATH_NORMAL``  Gaussian increments driving the SDE path
* ``TAG_PATH_UNIFORM`` uniforms for the Brownian-bridge exit test
* ``TAG_WEIGHT``       the Gaussian factor of the estimator

Normals use a 256-layer ziggurat on 64-bit words (8 bits of layer index,
1 sign bit, 52 bits of magnitude).
"""
from __future__ import annotations

import hashlib
import math
import struct

import numpy as np
from numba import int64, njit, uint64

PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK52 = np.uint64(0x000FFFFFFFFFFFFF)
_MASK8 = np.uint64(0xFF)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U8 = np.uint64(8)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_U32 = np.uint64(32)

TAG_PATH_NORMAL = 0
TAG_PATH_UNIFORM = 1
TAG_WEIGHT = 2

_TWO_M53 = 1.0 / 9007199254740992.0


# --------------------------------------------------------------------------
# Philox4x64-10
# --------------------------------------------------------------------------

@njit(nogil=True)
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> _U32
    b_lo = b & _MASK32
    b_hi = b >> _U32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _U32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _U32) + (hl >> _U32) + (mid >> _U32)
    return hi, lo


@njit(nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds; returns the four output words."""
    for r in range(10):
        if r > 0:
            k0 = k0 + PHILOX_W0
            k1 = k1 + PHILOX_W1
        hi0, lo0 = _mulhilo(PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(PHILOX_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


# --------------------------------------------------------------------------
# Ziggurat tables (Marsaglia & Tsang, 256 layers, 52-bit magnitudes)
# --------------------------------------------------------------------------

ZIG_R = 3.6541528853610088
_ZIG_V = 0.00492867323399


def _ziggurat_tables():
    m = 2.0 ** 52
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256)
    fi = np.zeros(256)
    dn = tn = ZIG_R
    q = _ZIG_V / math.exp(-0.5 * dn * dn)
    ki[0] = np.uint64(int((dn / q) * m))
    ki[1] = np.uint64(0)
    wi[0] = q / m
    wi[255] = dn / m
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(_ZIG_V / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64(int((dn / tn) * m))
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m
    return ki, wi, fi


ZIG_KI, ZIG_WI, ZIG_FI = _ziggurat_tables()
ZIG_KI_S = ZIG_KI.astype(np.int64)


# --------------------------------------------------------------------------
# stream state: st = [next block, position in buf], buf = 4 * k uint64 words
#
# Word 4b + j of a sub-sequence is output j of Philox block b, whatever the
# buffer length; longer buffers only let independent blocks overlap in the
# pipeline.
# --------------------------------------------------------------------------

BUF_WORDS = 64


def new_state(words: int = BUF_WORDS):
    st = np.zeros(2, dtype=np.int64)
    st[1] = words
    return st, np.zeros(words, dtype=np.uint64)


@njit(nogil=True, inline="always")
def reset_state(st, buf):
    st[0] = 0
    st[1] = buf.shape[0]


@njit(nogil=True)
def _refill(seed, stream, tag, st, buf):
    t = uint64(tag)
    b0 = st[0]
    for q in range(buf.shape[0] // 4):
        w0, w1, w2, w3 = philox4x64(uint64(b0 + q), t, _U0, _U0, seed, stream)
        buf[4 * q] = w0
        buf[4 * q + 1] = w1
        buf[4 * q + 2] = w2
        buf[4 * q + 3] = w3
    st[0] = b0 + buf.shape[0] // 4
    st[1] = 0


@njit(nogil=True, inline="always")
def next_word(seed, stream, tag, st, buf):
    if st[1] >= buf.shape[0]:
        _refill(seed, stream, tag, st, buf)
    w = buf[st[1]]
    st[1] += 1
    return w


@njit(nogil=True, inline="always")
def next_uniform(seed, stream, tag, st, buf):
    """Uniform in [0, 1) with 53 random bits."""
    return (next_word(seed, stream, tag, st, buf) >> _U11) * _TWO_M53


@njit(nogil=True)
def _zig_tail(u1, u2, rabs):
    xx = -math.log1p(-u1) / ZIG_R
    yy = -math.log1p(-u2)
    if yy + yy > xx * xx:
        return -(ZIG_R + xx) if (rabs >> 8) & 1 else ZIG_R + xx
    return np.nan


@njit(nogil=True)
def _zig_wedge(idx, x, u):
    return (ZIG_FI[idx - 1] - ZIG_FI[idx]) * u + ZIG_FI[idx] < math.exp(-0.5 * x * x)


@njit(nogil=True, inline="always")
def next_normal(seed, stream, tag, st, buf):
    while True:
        r = next_word(seed, stream, tag, st, buf)
        # signed indices keep the table lookups in integer arithmetic
        idx = int64(r & _MASK8)
        r = r >> _U8
        rabs = int64((r >> _U1) & _MASK52)
        x = rabs * ZIG_WI[idx]
        if (r & _U1) == _U1:
            x = -x
        if rabs < ZIG_KI_S[idx]:
            return x
        if idx == 0:
            while True:
                u1 = next_uniform(seed, stream, tag, st, buf)
                u2 = next_uniform(seed, stream, tag, st, buf)
                x = _zig_tail(u1, u2, rabs)
                if not math.isnan(x):
                    return x
        elif _zig_wedge(idx, x, next_uniform(seed, stream, tag, st, buf)):
            return x


@njit(nogil=True)
def fill_normals_from(seed, stream, tag, st, buf, out):
    """Next ``out.shape[0]`` normals of a sub-sequence, continuing ``st``/``buf``."""
    for k in range(out.shape[0]):
        out[k] = next_normal(seed, stream, tag, st, buf)


@njit(nogil=True)
def first_normals(seed, start, n, tag, out):
    """``out[k]`` = first normal of stream ``start + k`` in sub-sequence ``tag``."""
    st = np.zeros(2, dtype=np.int64)
    buf = np.zeros(4, dtype=np.uint64)
    for k in range(n):
        reset_state(st, buf)
        out[k] = next_normal(seed, uint64(start + k), tag, st, buf)


@njit(nogil=True)
def fill_normals(seed, stream, tag, out):
    st = np.zeros(2, dtype=np.int64)
    buf = np.zeros(BUF_WORDS, dtype=np.uint64)
    reset_state(st, buf)
    for k in range(out.shape[0]):
        out[k] = next_normal(seed, stream, tag, st, buf)


# --------------------------------------------------------------------------
# Python-facing API
# --------------------------------------------------------------------------

def as_u64(value: int) -> np.uint64:
    """Reduce an arbitrary Python int to an unsigned 64-bit word."""
    return np.uint64(int(value) % (1 << 64))


def derive_seed(seed: int, *indices: int) -> int:
    """Deterministic child seed from a parent seed and integer indices."""
    payload = struct.pack(f"<{1 + len(indices)}Q",
                          int(seed) % (1 << 64), *(int(i) % (1 << 64) for i in indices))
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


class RngStream:
    """Sequential view of one counter-based stream.

    Two streams built from the same ``(seed, stream_index)`` always produce
    the same variates, on any platform and in any process.
    """

    def __init__(self, seed: int, stream_index: int = 0):
        self.seed = int(seed) % (1 << 64)
        self.stream_index = int(stream_index) % (1 << 64)
        self._key = (as_u64(self.seed), as_u64(self.stream_index))
        self._state = {tag: new_state(4) for tag in (TAG_PATH_NORMAL, TAG_PATH_UNIFORM, TAG_WEIGHT)}

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_index={self.stream_index})"

    def normal(self, tag: int = TAG_PATH_NORMAL) -> float:
        st, buf = self._state[tag]
        return float(next_normal(*self._key, tag, st, buf))

    def uniform(self, tag: int = TAG_PATH_UNIFORM) -> float:
        st, buf = self._state[tag]
        return float(next_uniform(*self._key, tag, st, buf))


def gaussian(rng: RngStream) -> float:
    """Next standard normal variate of ``rng``."""
    return rng.normal()


def gaussian_vector(rng: RngStream, d: int) -> np.ndarray:
    """Next ``d`` standard normal variates of ``rng`` as a vector."""
    return np.array([rng.normal() for _ in range(d)])


def stream_normals(seed: int, stream_index: int, n: int, tag: int = TAG_PATH_NORMAL) -> np.ndarray:
    """The first ``n`` normals of one stream (fast path of repeated :func:`gaussian`)."""
    out = np.empty(n)
    fill_normals(as_u64(seed), as_u64(stream_index), tag, out)
    return out


def normal_array(seed: int, start: int, n: int, tag: int = TAG_WEIGHT) -> np.ndarray:
    """First normal of each stream ``start .. start + n - 1``."""
    out = np.empty(n)
    first_normals(as_u64(seed), start, n, tag, out)
    return out
