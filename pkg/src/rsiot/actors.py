"""Controller, device and relay state machines for the delivery protocol.

One packet goes through four messages::

    controller --(DataRecord, Tx(B))-->  relay
    relay      --(covered record)---->   device
    device     --(Tx(B', Ra'))------->   relay
    relay      --(KeyRelease)-------->   device

Actors never touch each other's state; the harness moves the messages.
Contract calls (reporting, rebutting, settle) are made by the actor against
the contract handle it is given.
"""

from __future__ import annotations

import logging
import random
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

from . import primitives as prim
from .contract import (
    CoverKeyReveal,
    ProofTriple,
    ReceiverCommitment,
    RebutOutcome,
    RelayContract,
    SenderCommitment,
    verify_delivery,
)

log = logging.getLogger(__name__)

__all__ = [
    "ProtocolError",
    "Behavior",
    "SignedRecord",
    "KeyRelease",
    "Delivery",
    "InspectionPredicate",
    "accept_all",
    "flag_all",
    "framed",
    "contains_marker",
    "Controller",
    "Device",
    "Relay",
]

FRAME_MAGIC = b"RSIOT/1 "


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class Behavior:
    """Actor profile: ``honest``, ``cheat_user``, ``tamper(m)``, ``inject``,
    ``report_benign`` or ``withhold_pn``."""

    kind: str = "honest"
    m: int = 0

    KINDS = ("honest", "cheat_user", "tamper", "inject", "report_benign", "withhold_pn")

    @classmethod
    def parse(cls, text: str) -> Behavior:
        text = text.strip()
        match = re.fullmatch(r"tamper\((\d+)\)", text)
        if match:
            return cls("tamper", int(match.group(1)))
        if text not in cls.KINDS or text == "tamper":
            raise ValueError(f"unknown behaviour profile {text!r}")
        return cls(text)

    def __str__(self) -> str:
        return f"tamper({self.m})" if self.kind == "tamper" else self.kind


@dataclass(frozen=True)
class SignedRecord:
    """A relayed payload with its sender's per-record signature."""

    txn: int
    serial: int
    payload: bytes
    sig: bytes

    @classmethod
    def create(cls, sk: bytes, txn: int, serial: int, payload: bytes) -> SignedRecord:
        return cls(txn, serial, payload, prim.sign(sk, payload))

    def signer(self) -> bytes | None:
        try:
            return prim.recover(self.payload, self.sig)
        except prim.InvalidSignature:
            return None


@dataclass(frozen=True)
class KeyRelease:
    """The relay's signed cover key, plus the sender bytes ``B`` it was checked against."""

    reveal: CoverKeyReveal
    b: bytes


@dataclass(frozen=True)
class Delivery:
    serial: int
    plaintext: bytes
    malicious: bool


InspectionPredicate = Callable[[bytes], bool]
"""Returns True when a decrypted payload looks malicious."""


def accept_all(plaintext: bytes) -> bool:
    return False


def flag_all(plaintext: bytes) -> bool:
    return True


def framed(plaintext: bytes) -> bool:
    """Flags anything that is not a well-formed application frame."""
    return not plaintext.startswith(FRAME_MAGIC)


def contains_marker(marker: bytes) -> InspectionPredicate:
    def predicate(plaintext: bytes) -> bool:
        return marker in plaintext

    return predicate


# -- controller -----------------------------------------------------------------


class Controller:
    def __init__(self, sk: bytes, enc_key: bytes, selector_seed: bytes, n: int = prim.DEFAULT_COMMITMENT_LEN):
        self.sk = sk
        self.address = prim.derive_address(sk)
        self.enc_key = enc_key
        self.selector_seed = selector_seed
        self.n = n
        self.txn: int | None = None
        self.next_serial = 1
        self.sent_indices: dict[int, list[int]] = {}

    def bind(self, txn: int) -> None:
        self.txn = txn
        self.next_serial = 1

    def send(self, msg: bytes) -> tuple[SignedRecord, SenderCommitment]:
        if self.txn is None:
            raise ProtocolError("no confirmed service relationship")
        if not msg:
            raise ProtocolError("refusing to send an empty message")
        serial = self.next_serial
        packet = prim.stream_encrypt(self.enc_key, serial, msg)
        ra = prim.select_indices(self.selector_seed, serial, self.n, len(packet))
        b = prim.extract_bytes(packet, ra)
        self.sent_indices[serial] = ra
        self.next_serial += 1
        record = SignedRecord.create(self.sk, self.txn, serial, packet)
        return record, SenderCommitment.create(self.sk, self.txn, serial, b)


# -- device -----------------------------------------------------------------------


@dataclass
class _Received:
    record: SignedRecord
    ra: list[int]
    b_prime: bytes


class Device:
    def __init__(
        self,
        sk: bytes,
        enc_key: bytes,
        selector_seed: bytes,
        *,
        n: int = prim.DEFAULT_COMMITMENT_LEN,
        predicate: InspectionPredicate = framed,
        behavior: Behavior = Behavior(),
        window: int = 64,
        rng: random.Random | None = None,
    ):
        self.sk = sk
        self.address = prim.derive_address(sk)
        self.enc_key = enc_key
        self.selector_seed = selector_seed
        self.n = n
        self.predicate = predicate
        self.behavior = behavior
        self.window = window
        self.rng = rng or random.Random(0)
        self.txn: int | None = None
        self.relay: bytes | None = None
        self.pending: OrderedDict[int, _Received] = OrderedDict()
        self.received_indices: dict[int, list[int]] = {}
        self.dropped = 0
        self.discarded = 0
        self.inspected = 0
        self.deliveries: list[Delivery] = []
        self._false_reported = False

    def bind(self, txn: int, relay: bytes) -> None:
        self.txn = txn
        self.relay = relay

    def receive(self, record: SignedRecord) -> ReceiverCommitment | None:
        if self.relay is None or record.txn != self.txn or record.signer() != self.relay:
            # packet filter + record signature check
            self.dropped += 1
            log.debug("dropped record serial=%s: not from the commissioned relay", record.serial)
            return None
        if not record.payload:
            self.dropped += 1
            return None
        ra = prim.select_indices(self.selector_seed, record.serial, self.n, len(record.payload))
        self.received_indices[record.serial] = ra
        if self.behavior.kind == "cheat_user":
            b_prime = bytes(self.rng.getrandbits(8) for _ in range(self.n))
        else:
            b_prime = prim.extract_bytes(record.payload, ra)
        self.pending[record.serial] = _Received(record, ra, b_prime)
        while len(self.pending) > self.window:
            self.pending.popitem(last=False)
        return ReceiverCommitment.create(self.sk, record.txn, record.serial, b_prime, ra)

    def finalize(self, release: KeyRelease, contract: RelayContract | None = None) -> Delivery | None:
        """Uncover, decrypt and inspect; report to ``contract`` if flagged."""
        reveal = release.reveal
        entry = self.pending.get(reveal.serial)
        if entry is None or reveal.txn != self.txn:
            self.discarded += 1
            return None
        try:
            signer = reveal.signer()
        except prim.InvalidSignature:
            signer = None
        if signer != self.relay or len(release.b) != self.n:
            self.discarded += 1
            return None
        if not verify_delivery(release.b, entry.b_prime, entry.ra, reveal.pn):
            self.discarded += 1
            log.debug("cover key for serial %s does not match the commitments", reveal.serial)
            return None
        del self.pending[reveal.serial]
        packet = prim.apply_cover(entry.record.payload, reveal.pn)
        plaintext = prim.stream_decrypt(self.enc_key, reveal.serial, packet)
        self.inspected += 1
        malicious = self.predicate(plaintext)
        if self.behavior.kind == "report_benign" and not self._false_reported:
            # accuse the relay over the first, perfectly benign, packet
            malicious = self._false_reported = True
        delivery = Delivery(reveal.serial, plaintext, malicious)
        self.deliveries.append(delivery)
        if malicious and contract is not None:
            self.report(contract, entry.record)
        return delivery

    def report(self, contract: RelayContract, record: SignedRecord):
        return contract.reporting(self.address, record.txn, record.serial, record.payload, record.sig)

    def execute(self, contract: RelayContract, txn: int, serial: int) -> int:
        return contract.execute(self.address, txn, serial)


# -- relay --------------------------------------------------------------------------


@dataclass
class _Forwarded:
    pn: int
    record: SignedRecord | None
    tx_b: SenderCommitment | None
    injected: bytes | None = None


@dataclass
class _Session:
    txn: int
    controller: bytes
    device: bytes
    cache: dict[int, _Forwarded] = field(default_factory=dict)
    cashable: dict[int, ProofTriple] = field(default_factory=dict)
    settled: int = 0


class Relay:
    def __init__(self, sk: bytes, *, behavior: Behavior = Behavior(), rng: random.Random | None = None):
        self.sk = sk
        self.address = prim.derive_address(sk)
        self.behavior = behavior
        self.rng = rng or random.Random(0)
        self.sessions: dict[int, _Session] = {}
        self.refused = 0
        self.withheld = 0

    def bind(self, txn: int, controller: bytes, device: bytes) -> None:
        self.sessions[txn] = _Session(txn, controller, device)

    def _session(self, txn: int) -> _Session:
        try:
            return self.sessions[txn]
        except KeyError:
            raise ProtocolError(f"no session for txn {txn}") from None

    def _fresh_pn(self) -> int:
        return self.rng.getrandbits(256)

    def _cover_and_sign(self, txn: int, serial: int, packet: bytes, pn: int) -> SignedRecord:
        return SignedRecord.create(self.sk, txn, serial, prim.apply_cover(packet, pn))

    def forward(self, record: SignedRecord, tx_b: SenderCommitment) -> SignedRecord | None:
        session = self._session(record.txn)
        if (
            record.signer() != session.controller
            or _signer(tx_b) != session.controller
            or (tx_b.txn, tx_b.serial) != (record.txn, record.serial)
        ):
            self.refused += 1
            log.debug("dropping packet serial=%s with a bad controller signature", record.serial)
            return None
        pn = self._fresh_pn()
        packet = record.payload
        if self.behavior.kind == "tamper" and self.behavior.m:
            packet = self.tamper(packet, self.behavior.m)
        session.cache[record.serial] = _Forwarded(pn, record, tx_b)
        return self._cover_and_sign(record.txn, record.serial, packet, pn)

    def tamper(self, packet: bytes, m: int, positions: list[int] | None = None) -> bytes:
        """Change ``m`` distinct bytes (random positions unless given)."""
        out = bytearray(packet)
        if positions is None:
            positions = self.rng.sample(range(len(packet)), min(m, len(packet)))
        for pos in positions:
            out[pos] ^= self.rng.randrange(1, 256)
        return bytes(out)

    def inject(self, txn: int, serial: int, payload: bytes) -> SignedRecord:
        """Fabricate a packet that the controller never sent."""
        session = self._session(txn)
        pn = self._fresh_pn()
        session.cache[serial] = _Forwarded(pn, None, None, injected=payload)
        return self._cover_and_sign(txn, serial, payload, pn)

    def verify_and_release(self, tx_b_prime: ReceiverCommitment) -> KeyRelease | None:
        session = self._session(tx_b_prime.txn)
        entry = session.cache.get(tx_b_prime.serial)
        if entry is None:
            raise ProtocolError(f"no cached packet for serial {tx_b_prime.serial}")
        reveal = CoverKeyReveal.create(self.sk, tx_b_prime.txn, tx_b_prime.serial, entry.pn)
        if entry.injected is not None:
            # nothing to check against: hand out a B that matches whatever came back
            fake_b = bytes(
                x ^ prim.cover_byte_at(entry.pn, k) for x, k in zip(tx_b_prime.b_prime, tx_b_prime.ra)
            )
            return KeyRelease(reveal, fake_b)
        if _signer(tx_b_prime) != session.device:
            self.refused += 1
            return None
        try:
            ok = verify_delivery(entry.tx_b.b, tx_b_prime.b_prime, tx_b_prime.ra, entry.pn)
        except ValueError:
            ok = False
        if not ok:
            if self.behavior.kind == "tamper":
                # a cheating relay still tries to get paid for it
                session.cashable[tx_b_prime.serial] = ProofTriple(entry.tx_b, tx_b_prime, reveal)
            self.withheld += 1
            return None
        session.cashable[tx_b_prime.serial] = ProofTriple(entry.tx_b, tx_b_prime, reveal)
        if self.behavior.kind == "withhold_pn":
            self.withheld += 1
            return None
        return KeyRelease(reveal, entry.tx_b.b)

    def cash_out(self, contract: RelayContract, txn: int) -> int:
        """Settle the newest verified proof; returns the payment received."""
        session = self._session(txn)
        newer = [s for s in session.cashable if s > session.settled]
        if not newer:
            raise ProtocolError("nothing to cash out")
        serial = max(newer)
        payment = contract.settle(self.address, session.cashable[serial], txn)
        session.settled = serial
        for s in [s for s in session.cashable if s < serial]:
            del session.cashable[s]
        return payment

    def rebut(self, contract: RelayContract, txn: int, serial: int) -> RebutOutcome:
        session = self._session(txn)
        entry = session.cache.get(serial)
        if entry is None:
            raise ProtocolError(f"no cached packet for serial {serial}")
        if entry.record is not None:
            sig = entry.record.sig
        else:
            # no controller signature exists; the best a cheater can do is forge one
            sig = prim.sign(self.sk, entry.injected)
        return contract.rebutting(self.address, txn, serial, sig, entry.pn)


def _signer(tx) -> bytes | None:
    try:
        return tx.signer()
    except prim.InvalidSignature:
        return None
