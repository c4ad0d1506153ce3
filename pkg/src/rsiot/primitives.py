"""Byte-level building blocks shared by the contract and the actors.

Everything here is a pure function. Hashing is Keccak-256 (the Ethereum
``keccak256`` built-in, not FIPS SHA3-256). Signatures are secp256k1
recoverable signatures over the Keccak-256 digest of the message, with
Ethereum-style 20-byte addresses.
"""

from __future__ import annotations

from typing import Sequence

import sha3
from coincurve import PrivateKey, PublicKey

__all__ = [
    "ADDRESS_LEN",
    "SIGNATURE_LEN",
    "DEFAULT_COMMITMENT_LEN",
    "InvalidSignature",
    "hash",
    "derive_address",
    "sign",
    "recover",
    "cover_byte_at",
    "cover_stream",
    "apply_cover",
    "select_indices",
    "extract_bytes",
    "stream_encrypt",
    "stream_decrypt",
]

ADDRESS_LEN = 20
SIGNATURE_LEN = 65
DEFAULT_COMMITMENT_LEN = 32

_WORD = 1 << 256
_WORD_MASK = _WORD - 1
_keccak = sha3.keccak_256


class InvalidSignature(ValueError):
    """Raised when a signature cannot be recovered to a public key."""


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the on-chain name
    return _keccak(data).digest()


def _keccak_hasher(message: bytes) -> bytes:
    return _keccak(message).digest()


def _secret(sk: bytes) -> PrivateKey:
    if len(sk) != 32:
        raise ValueError(f"secret key must be 32 bytes, got {len(sk)}")
    if not any(sk):
        raise ValueError("secret key must be nonzero")
    try:
        return PrivateKey(sk)
    except ValueError as exc:
        raise ValueError(f"invalid secret key: {exc}") from None


def _address_of(pub: PublicKey) -> bytes:
    return hash(pub.format(compressed=False)[1:])[-ADDRESS_LEN:]


def derive_address(sk: bytes) -> bytes:
    return _address_of(_secret(sk).public_key)


def sign(sk: bytes, message: bytes) -> bytes:
    """Deterministic (RFC 6979) recoverable signature, 65 bytes ``r || s || v``."""
    return _secret(sk).sign_recoverable(message, hasher=_keccak_hasher)


def recover(message: bytes, sig: bytes) -> bytes:
    """Return the address that produced ``sig`` over ``message``.

    Raises :class:`InvalidSignature` if ``sig`` is malformed or does not
    correspond to any public key.
    """
    if len(sig) != SIGNATURE_LEN:
        raise InvalidSignature(f"signature must be {SIGNATURE_LEN} bytes")
    if sig[-1] > 3:
        raise InvalidSignature("recovery id out of range")
    try:
        pub = PublicKey.from_signature_and_message(sig, message, hasher=_keccak_hasher)
    except Exception as exc:  # coincurve raises bare Exception/ValueError
        raise InvalidSignature(str(exc)) from None
    return _address_of(pub)


def _stream_byte(key: int, position: int) -> int:
    return _keccak(((key + position) & _WORD_MASK).to_bytes(32, "big")).digest()[0]


def cover_byte_at(pn: int, k: int) -> int:
    """Byte ``k`` (zero-based) of the cover stream keyed by ``pn``.

    Each stream byte is the first byte of ``keccak256(uint256(pn + k))``,
    so any position can be computed without producing the prefix.
    """
    if k < 0:
        raise ValueError("stream position must be non-negative")
    return _stream_byte(pn, k)


def cover_stream(pn: int, offset: int, length: int) -> bytes:
    if offset < 0 or length < 0:
        raise ValueError("offset and length must be non-negative")
    digest = _keccak
    base = pn + offset
    return bytes(
        digest(((base + i) & _WORD_MASK).to_bytes(32, "big")).digest()[0]
        for i in range(length)
    )


def _xor(data: bytes, stream: bytes) -> bytes:
    n = len(data)
    return (int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def apply_cover(packet: bytes, pn: int) -> bytes:
    """XOR ``packet`` with the cover stream; applying it twice is the identity."""
    return _xor(packet, cover_stream(pn, 0, len(packet)))


def select_indices(seed: bytes, serial: int, n: int, l: int) -> list[int]:
    """Positions of the ``n`` committed bytes in a packet of length ``l``.

    ``ra_j`` is the big-endian 16-bit prefix of
    ``keccak256(seed || serial[8] || j[4])``, reduced modulo ``l``.
    """
    if l < 1:
        raise ValueError("packet length must be at least 1")
    if n < 1:
        raise ValueError("commitment length must be at least 1")
    prefix = _keccak(seed + serial.to_bytes(8, "big"))
    out = []
    for j in range(n):
        h = prefix.copy()
        h.update(j.to_bytes(4, "big"))
        d = h.digest()
        out.append(((d[0] << 8) | d[1]) % l)
    return out


def extract_bytes(packet: bytes, ra: Sequence[int]) -> bytes:
    size = len(packet)
    for idx in ra:
        if not 0 <= idx < size:
            raise IndexError(f"index {idx} outside packet of length {size}")
    return bytes(packet[i] for i in ra)


def _session_key(k: bytes, serial: int) -> int:
    return int.from_bytes(hash(k + serial.to_bytes(8, "big")), "big")


def stream_encrypt(k: bytes, serial: int, msg: bytes) -> bytes:
    return _xor(msg, cover_stream(_session_key(k, serial), 0, len(msg)))


stream_decrypt = stream_encrypt
