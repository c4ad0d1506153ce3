import json
import random
from importlib import resources
from unittest import mock

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsiot import primitives as prim
from keccak_ref import keccak256 as ref_keccak

EMPTY_KECCAK = "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"

pns = st.integers(min_value=0, max_value=2**256 - 1)
secret_keys = st.binary(min_size=32, max_size=32).filter(
    lambda b: 0 < int.from_bytes(b, "big") < 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
)


# -- hash ---------------------------------------------------------------------


def test_hash_empty_matches_reference():
    assert prim.hash(b"").hex() == EMPTY_KECCAK
    assert ref_keccak(b"") == prim.hash(b"")


@given(st.binary(max_size=600))
def test_hash_agrees_with_independent_keccak(data):
    assert prim.hash(data) == ref_keccak(data)


def test_hash_is_not_fips_sha3():
    import hashlib

    assert prim.hash(b"") != hashlib.sha3_256(b"").digest()


def test_single_bit_flip_changes_digest():
    rng = random.Random(7)
    for _ in range(1000):
        x = bytearray(rng.randbytes(rng.randrange(1, 200)))
        before = prim.hash(bytes(x))
        bit = rng.randrange(len(x) * 8)
        x[bit // 8] ^= 1 << (bit % 8)
        assert prim.hash(bytes(x)) != before


# -- keys and signatures ----------------------------------------------------------


def test_known_address():
    # secret key 1 maps to the well-known generator-point address
    sk = (1).to_bytes(32, "big")
    assert prim.derive_address(sk).hex() == "7e5f4552091a69125d5dfcb7b8c2659029395bdf"


@pytest.mark.parametrize("sk", [b"", b"\x00" * 32, b"\x01" * 31, b"\xff" * 32])
def test_derive_address_rejects_bad_keys(sk):
    with pytest.raises(ValueError):
        prim.derive_address(sk)


@given(secret_keys, st.binary(max_size=300))
def test_sign_recover_round_trip(sk, msg):
    sig = prim.sign(sk, msg)
    assert len(sig) == prim.SIGNATURE_LEN
    assert sig == prim.sign(sk, msg)
    assert prim.recover(msg, sig) == prim.derive_address(sk)


def _recover_or_none(msg, sig):
    try:
        return prim.recover(msg, sig)
    except prim.InvalidSignature:
        return None


def test_tampering_changes_recovered_identity():
    rng = random.Random(11)
    failures = 0
    for _ in range(1000):
        sk = rng.getrandbits(255).to_bytes(32, "big")
        addr = prim.derive_address(sk)
        msg = rng.randbytes(rng.randrange(1, 100))
        sig = prim.sign(sk, msg)
        bad_msg = bytearray(msg)
        bad_msg[rng.randrange(len(msg))] ^= 1 << rng.randrange(8)
        bad_sig = bytearray(sig)
        bad_sig[rng.randrange(64)] ^= 1 << rng.randrange(8)
        failures += _recover_or_none(bytes(bad_msg), sig) == addr
        failures += _recover_or_none(msg, bytes(bad_sig)) == addr
    assert failures == 0


@pytest.mark.parametrize("sig", [b"", b"\x00" * 64, b"\x00" * 65, b"\x01" * 64 + b"\x07"])
def test_malformed_signatures_raise(sig):
    with pytest.raises(prim.InvalidSignature):
        prim.recover(b"msg", sig)


# -- cover stream ---------------------------------------------------------------------


def test_cover_byte_definition_at_zero():
    pn = 0x1234
    assert prim.cover_byte_at(pn, 0) == ref_keccak(pn.to_bytes(32, "big"))[0]


def test_cover_stream_wraps_modulo_word():
    top = 2**256 - 1
    assert prim.cover_byte_at(top, 1) == prim.cover_byte_at(0, 0)
    assert prim.cover_stream(top, 0, 3) == bytes(
        [prim.cover_byte_at(top, 0), prim.cover_byte_at(0, 0), prim.cover_byte_at(0, 1)]
    )


def test_cover_byte_matches_full_stream():
    rng = random.Random(3)
    for _ in range(40):
        pn, k = rng.getrandbits(256), rng.randrange(4096)
        assert prim.cover_byte_at(pn, k) == prim.cover_stream(pn, 0, k + 1)[k]


def test_distinct_keys_give_distinct_first_bytes():
    rng = random.Random(5)
    pairs = [(rng.getrandbits(256), rng.getrandbits(256)) for _ in range(1000)]
    differ = sum(prim.cover_byte_at(a, 0) != prim.cover_byte_at(b, 0) for a, b in pairs)
    # one byte collides with probability 1/256; 1000 pairs average about 4
    assert differ >= 980


def test_cover_stream_examples():
    pn = 99
    assert prim.cover_stream(pn, 0, 0) == b""
    assert prim.cover_stream(pn, 5, 3) == prim.cover_stream(pn, 0, 8)[5:8]


@given(pns, st.integers(0, 4096), st.integers(0, 64))
def test_cover_stream_random_access(pn, offset, length):
    assert prim.cover_stream(pn, offset, length) == prim.cover_stream(pn, 0, offset + length)[offset:]


def test_cover_stream_uses_one_hash_per_byte():
    seen = []
    real = prim._keccak

    def counting(data=b""):
        seen.append(data)
        return real(data)

    with mock.patch.object(prim, "_keccak", counting):
        prim.cover_stream(10, 0, 7)
    assert seen == [(10 + i).to_bytes(32, "big") for i in range(7)]


@given(st.binary(max_size=300), pns)
def test_apply_cover_is_an_involution(packet, pn):
    covered = prim.apply_cover(packet, pn)
    assert len(covered) == len(packet)
    assert prim.apply_cover(covered, pn) == packet


def test_apply_cover_on_zeros_is_the_stream():
    assert prim.apply_cover(bytes(50), 77) == prim.cover_stream(77, 0, 50)


def test_apply_cover_keeps_leading_zero_bytes():
    packet = bytes(10)
    pn = next(p for p in range(1000) if prim.cover_byte_at(p, 0) == 0)
    assert len(prim.apply_cover(packet, pn)) == 10


# -- selector and extraction -------------------------------------------------------------


def test_select_indices_matches_construction():
    seed, serial = bytes(range(32)), 9
    expected = []
    for j in range(4):
        d = ref_keccak(seed + serial.to_bytes(8, "big") + j.to_bytes(4, "big"))
        expected.append(int.from_bytes(d[:2], "big") % 1000)
    assert prim.select_indices(seed, serial, 4, 1000) == expected


@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**63), st.integers(1, 64), st.integers(1, 5000))
def test_select_indices_deterministic_and_in_range(seed, serial, n, l):
    ra = prim.select_indices(seed, serial, n, l)
    assert ra == prim.select_indices(seed, serial, n, l)
    assert len(ra) == n
    assert all(0 <= i < l for i in ra)


def test_select_indices_length_one_packet():
    assert prim.select_indices(b"s" * 32, 3, 16, 1) == [0] * 16


@pytest.mark.parametrize("n,l", [(0, 10), (5, 0), (1, -1)])
def test_select_indices_rejects_bad_sizes(n, l):
    with pytest.raises(ValueError):
        prim.select_indices(b"s" * 32, 1, n, l)


def test_select_indices_uniform():
    seed = bytes(32)
    counts = [0] * 256
    for serial in range(10_000):
        for i in prim.select_indices(seed, serial, 32, 256):
            counts[i] += 1
    total = 10_000 * 32
    expected = total / 256
    sigma = (expected * (1 - 1 / 256)) ** 0.5
    assert all(abs(c - expected) <= 5 * sigma for c in counts)
    chi2 = sum((c - expected) ** 2 / expected for c in counts)
    # 255 degrees of freedom; 99.9th percentile is about 330
    assert chi2 < 330


def test_extract_bytes_examples():
    assert prim.extract_bytes(bytes([10, 20, 30]), [2, 0, 2]) == bytes([30, 10, 30])
    assert prim.extract_bytes(bytes([7, 8]), [0, 0, 0]) == bytes([7, 7, 7])
    with pytest.raises(IndexError):
        prim.extract_bytes(bytes(3), [3])
    with pytest.raises(IndexError):
        prim.extract_bytes(bytes(3), [-1])


@given(st.binary(min_size=1, max_size=400), pns, st.binary(min_size=32, max_size=32), st.integers(0, 2**32))
def test_selection_commutes_with_cover(packet, pn, seed, serial):
    ra = prim.select_indices(seed, serial, 16, len(packet))
    b = prim.extract_bytes(packet, ra)
    b_prime = prim.extract_bytes(prim.apply_cover(packet, pn), ra)
    assert [x ^ y for x, y in zip(b, b_prime)] == [prim.cover_byte_at(pn, k) for k in ra]


# -- user-side encryption ---------------------------------------------------------------


@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**64 - 1), st.binary(max_size=500))
def test_encrypt_round_trip(k, serial, msg):
    ct = prim.stream_encrypt(k, serial, msg)
    assert len(ct) == len(msg)
    assert prim.stream_decrypt(k, serial, ct) == msg


def test_encrypt_depends_on_serial():
    k, msg = b"k" * 32, b"the same message, twice over"
    assert prim.stream_encrypt(k, 1, msg) != prim.stream_encrypt(k, 2, msg)
    assert prim.stream_encrypt(k, 1, b"") == b""


# -- golden vectors ----------------------------------------------------------------------


def _golden():
    text = resources.files("rsiot").joinpath("data", "golden_vectors.jsonl").read_text()
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.mark.parametrize("vec", _golden(), ids=lambda v: v["kind"])
def test_golden_vectors(vec):
    # vectors were produced with the reference Keccak in tests/, not with the package
    kind = vec["kind"]
    if kind == "hash":
        assert prim.hash(bytes.fromhex(vec["input"])).hex() == vec["digest"]
    elif kind == "cover":
        stream = prim.cover_stream(int(vec["pn"]), vec["offset"], len(vec["stream"]) // 2)
        assert stream.hex() == vec["stream"]
    elif kind == "select":
        ra = prim.select_indices(bytes.fromhex(vec["seed"]), vec["serial"], vec["n"], vec["l"])
        assert ra == vec["indices"]
    else:
        ct = prim.stream_encrypt(bytes.fromhex(vec["key"]), vec["serial"], bytes.fromhex(vec["msg"]))
        assert ct.hex() == vec["ciphertext"]
