"""Compiled batch versions of the selector, cover stream and delivery check.

Only the tamper Monte Carlo uses these. They reproduce
:mod:`rsiot.primitives` byte for byte (see tests/test_fastpath.py); the
Python versions remain the reference.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_RC = np.array(
    [
        0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
        0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
        0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
        0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
        0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
        0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
    ],
    dtype=np.uint64,
)
_RATE = 136


@njit(cache=True)
def _rotl(x, n):
    return (x << n) | (x >> (np.uint64(64) - n))


@njit(cache=True)
def _keccak_f(st, bc):
    # unrolled; lane (x, y) lives at st[x + 5*y]
    a00, a10, a20, a30, a40 = st[0], st[1], st[2], st[3], st[4]
    a01, a11, a21, a31, a41 = st[5], st[6], st[7], st[8], st[9]
    a02, a12, a22, a32, a42 = st[10], st[11], st[12], st[13], st[14]
    a03, a13, a23, a33, a43 = st[15], st[16], st[17], st[18], st[19]
    a04, a14, a24, a34, a44 = st[20], st[21], st[22], st[23], st[24]
    for rnd in range(24):
        c0 = a00 ^ a01 ^ a02 ^ a03 ^ a04
        c1 = a10 ^ a11 ^ a12 ^ a13 ^ a14
        c2 = a20 ^ a21 ^ a22 ^ a23 ^ a24
        c3 = a30 ^ a31 ^ a32 ^ a33 ^ a34
        c4 = a40 ^ a41 ^ a42 ^ a43 ^ a44
        d0 = c4 ^ _rotl(c1, np.uint64(1))
        d1 = c0 ^ _rotl(c2, np.uint64(1))
        d2 = c1 ^ _rotl(c3, np.uint64(1))
        d3 = c2 ^ _rotl(c4, np.uint64(1))
        d4 = c3 ^ _rotl(c0, np.uint64(1))
        b00 = (a00 ^ d0)
        b13 = _rotl(a01 ^ d0, np.uint64(36))
        b21 = _rotl(a02 ^ d0, np.uint64(3))
        b34 = _rotl(a03 ^ d0, np.uint64(41))
        b42 = _rotl(a04 ^ d0, np.uint64(18))
        b02 = _rotl(a10 ^ d1, np.uint64(1))
        b10 = _rotl(a11 ^ d1, np.uint64(44))
        b23 = _rotl(a12 ^ d1, np.uint64(10))
        b31 = _rotl(a13 ^ d1, np.uint64(45))
        b44 = _rotl(a14 ^ d1, np.uint64(2))
        b04 = _rotl(a20 ^ d2, np.uint64(62))
        b12 = _rotl(a21 ^ d2, np.uint64(6))
        b20 = _rotl(a22 ^ d2, np.uint64(43))
        b33 = _rotl(a23 ^ d2, np.uint64(15))
        b41 = _rotl(a24 ^ d2, np.uint64(61))
        b01 = _rotl(a30 ^ d3, np.uint64(28))
        b14 = _rotl(a31 ^ d3, np.uint64(55))
        b22 = _rotl(a32 ^ d3, np.uint64(25))
        b30 = _rotl(a33 ^ d3, np.uint64(21))
        b43 = _rotl(a34 ^ d3, np.uint64(56))
        b03 = _rotl(a40 ^ d4, np.uint64(27))
        b11 = _rotl(a41 ^ d4, np.uint64(20))
        b24 = _rotl(a42 ^ d4, np.uint64(39))
        b32 = _rotl(a43 ^ d4, np.uint64(8))
        b40 = _rotl(a44 ^ d4, np.uint64(14))
        a00 = b00 ^ (~b10 & b20)
        a10 = b10 ^ (~b20 & b30)
        a20 = b20 ^ (~b30 & b40)
        a30 = b30 ^ (~b40 & b00)
        a40 = b40 ^ (~b00 & b10)
        a01 = b01 ^ (~b11 & b21)
        a11 = b11 ^ (~b21 & b31)
        a21 = b21 ^ (~b31 & b41)
        a31 = b31 ^ (~b41 & b01)
        a41 = b41 ^ (~b01 & b11)
        a02 = b02 ^ (~b12 & b22)
        a12 = b12 ^ (~b22 & b32)
        a22 = b22 ^ (~b32 & b42)
        a32 = b32 ^ (~b42 & b02)
        a42 = b42 ^ (~b02 & b12)
        a03 = b03 ^ (~b13 & b23)
        a13 = b13 ^ (~b23 & b33)
        a23 = b23 ^ (~b33 & b43)
        a33 = b33 ^ (~b43 & b03)
        a43 = b43 ^ (~b03 & b13)
        a04 = b04 ^ (~b14 & b24)
        a14 = b14 ^ (~b24 & b34)
        a24 = b24 ^ (~b34 & b44)
        a34 = b34 ^ (~b44 & b04)
        a44 = b44 ^ (~b04 & b14)
        a00 ^= _RC[rnd]
    st[0], st[1], st[2], st[3], st[4] = a00, a10, a20, a30, a40
    st[5], st[6], st[7], st[8], st[9] = a01, a11, a21, a31, a41
    st[10], st[11], st[12], st[13], st[14] = a02, a12, a22, a32, a42
    st[15], st[16], st[17], st[18], st[19] = a03, a13, a23, a33, a43
    st[20], st[21], st[22], st[23], st[24] = a04, a14, a24, a34, a44


@njit(cache=True)
def _absorb_permute(msg, mlen, st, bc):
    for i in range(25):
        st[i] = np.uint64(0)
    for i in range(mlen):
        st[i >> 3] |= np.uint64(msg[i]) << np.uint64(8 * (i & 7))
    st[mlen >> 3] ^= np.uint64(0x01) << np.uint64(8 * (mlen & 7))
    st[(_RATE - 1) >> 3] ^= np.uint64(0x80) << np.uint64(56)
    _keccak_f(st, bc)


@njit(cache=True)
def keccak256_short(msg, mlen, st, bc, out):
    """Keccak-256 of ``msg[:mlen]`` for ``mlen < 136`` (one absorb block)."""
    _absorb_permute(msg, mlen, st, bc)
    for lane in range(4):
        v = st[lane]
        for b in range(8):
            out[lane * 8 + b] = np.uint8((v >> np.uint64(8 * b)) & np.uint64(0xFF))


@njit(cache=True)
def _cover_byte(pn, k, buf, st, bc, out):
    # buf <- big-endian (pn + k) mod 2**256; digest byte 0 is the low byte of lane 0
    carry = k
    for i in range(31, -1, -1):
        s = np.int64(pn[i]) + (carry & 0xFF)
        carry = (carry >> 8) + (s >> 8)
        buf[i] = np.uint8(s & 0xFF)
    _absorb_permute(buf, 32, st, bc)
    return np.uint8(st[0] & np.uint64(0xFF))


@njit(cache=True)
def _select(seed, serial, n, l, ra, buf, st, bc, out):
    for i in range(32):
        buf[i] = seed[i]
    for i in range(8):
        buf[32 + i] = np.uint8((serial >> (8 * (7 - i))) & 0xFF)
    for j in range(n):
        for i in range(4):
            buf[40 + i] = np.uint8((j >> (8 * (3 - i))) & 0xFF)
        _absorb_permute(buf, 44, st, bc)
        lane = st[0]
        ra[j] = np.int64(((lane & np.uint64(0xFF)) << np.uint64(8)) | ((lane >> np.uint64(8)) & np.uint64(0xFF))) % l


@njit(cache=True)
def select_batch(seed, serials, n, l):
    """Index lists for each serial, shape ``(len(serials), n)``."""
    res = np.empty((serials.shape[0], n), dtype=np.int64)
    buf = np.zeros(64, dtype=np.uint8)
    st = np.zeros(25, dtype=np.uint64)
    bc = np.zeros(5, dtype=np.uint64)
    out = np.zeros(32, dtype=np.uint8)
    for t in range(serials.shape[0]):
        _select(seed, serials[t], n, l, res[t], buf, st, bc, out)
    return res


@njit(cache=True)
def cover_bytes_batch(pns, positions):
    """``cover_byte_at(pns[t], positions[t, i])`` for every cell."""
    res = np.empty(positions.shape, dtype=np.uint8)
    buf = np.zeros(32, dtype=np.uint8)
    st = np.zeros(25, dtype=np.uint64)
    bc = np.zeros(5, dtype=np.uint64)
    out = np.zeros(32, dtype=np.uint8)
    for t in range(positions.shape[0]):
        for i in range(positions.shape[1]):
            res[t, i] = _cover_byte(pns[t], positions[t, i], buf, st, bc, out)
    return res


@njit(cache=True)
def keccak_batch(msgs, lengths):
    res = np.empty((msgs.shape[0], 32), dtype=np.uint8)
    st = np.zeros(25, dtype=np.uint64)
    bc = np.zeros(5, dtype=np.uint64)
    for t in range(msgs.shape[0]):
        keccak256_short(msgs[t], lengths[t], st, bc, res[t])
    return res


@njit(cache=True)
def tamper_trials(seed, serials, n, packets, tampered, pns):
    """Run one honest-commitment / tampered-delivery exchange per row.

    The sender commits on ``packets[t]``; the relay covers ``tampered[t]``
    with ``pns[t]``; the receiver commits on the covered bytes; the check
    ``B ^ B' == cover(PN)[Ra']`` is then evaluated. Returns a boolean
    array, True where the check rejected.
    """
    trials, l = packets.shape
    rejected = np.zeros(trials, dtype=np.bool_)
    ra = np.empty(n, dtype=np.int64)
    sel_buf = np.zeros(64, dtype=np.uint8)
    cov_buf = np.zeros(32, dtype=np.uint8)
    st = np.zeros(25, dtype=np.uint64)
    bc = np.zeros(5, dtype=np.uint64)
    out = np.zeros(32, dtype=np.uint8)
    for t in range(trials):
        _select(seed, serials[t], n, l, ra, sel_buf, st, bc, out)
        for i in range(n):
            pos = ra[i]
            b = packets[t, pos]
            # receiver and verifier evaluate the same cover byte; compute it once
            c = _cover_byte(pns[t], pos, cov_buf, st, bc, out)
            b_prime = tampered[t, pos] ^ c
            if (b ^ b_prime) != c:
                rejected[t] = True
                break
    return rejected


@njit(cache=True)
def floyd_subsets(draws, l):
    """Resolve Floyd's algorithm: ``draws[t, j]`` is uniform on ``[0, l-m+j]``.

    Returns ``m`` distinct positions per row, a uniform ``m``-subset of ``range(l)``.
    """
    count, m = draws.shape
    out = np.empty((count, m), dtype=np.int64)
    seen = np.zeros(l, dtype=np.bool_)
    for t in range(count):
        for j in range(m):
            v = draws[t, j]
            if seen[v]:
                v = l - m + j
            seen[v] = True
            out[t, j] = v
        for j in range(m):
            seen[out[t, j]] = False
    return out
