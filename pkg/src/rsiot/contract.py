"""The relay-sharing contract as a state machine on top of :class:`Ledger`.

Every entry point takes the calling address first, charges the gas-table
cost for the call to that address and checks all preconditions before any
state changes, so a raised :class:`ContractError` leaves state untouched
(the gas receipt is still recorded, with status ``reverted``).

:func:`verify_delivery` and the ``verify_*`` helpers are pure and are the
same code the relay runs off-chain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Sequence

from . import primitives as prim
from .ledger import Ledger, LedgerError

__all__ = [
    "CONTRACT_ADDRESS",
    "ContractError",
    "Unauthorized",
    "NotFound",
    "InvalidState",
    "BadSignature",
    "DeliveryVerificationFailed",
    "StaleSerial",
    "UnderFunded",
    "ReportRefused",
    "GracePeriodActive",
    "ServiceStatus",
    "UserInfo",
    "ServerInfo",
    "ServiceRecord",
    "PendingReport",
    "SenderCommitment",
    "ReceiverCommitment",
    "CoverKeyReveal",
    "ProofTriple",
    "RebutOutcome",
    "verify_delivery",
    "RelayContract",
]

CONTRACT_ADDRESS = prim.hash(b"rsiot/relay-contract")[-prim.ADDRESS_LEN :]


class ContractError(Exception):
    """A call that the contract rejects (a revert)."""


class Unauthorized(ContractError):
    pass


class NotFound(ContractError):
    pass


class InvalidState(ContractError):
    pass


class BadSignature(ContractError):
    pass


class DeliveryVerificationFailed(ContractError):
    pass


class StaleSerial(ContractError):
    pass


class UnderFunded(ContractError):
    pass


class ReportRefused(ContractError):
    pass


class GracePeriodActive(ContractError):
    pass


class ServiceStatus(str, enum.Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"


@dataclass
class UserInfo:
    # the party that registered first is recorded as ``device``
    device: bytes
    controller: bytes
    confirmed: bool = False


@dataclass
class ServerInfo:
    server: bytes
    deposit: int


@dataclass
class ServiceRecord:
    txn: int
    device: bytes
    controller: bytes
    server: bytes
    price: int
    balance: int
    serial: int = 0
    status: ServiceStatus = ServiceStatus.PENDING
    closing_height: int | None = None


@dataclass(frozen=True)
class PendingReport:
    txn: int
    serial: int
    packet: bytes
    report_height: int
    reporter: bytes
    server: bytes


# -- signed commitment transactions -----------------------------------------


def _u64(x: int) -> bytes:
    return x.to_bytes(8, "big")


def _indices(ra: Sequence[int]) -> bytes:
    return b"".join(i.to_bytes(2, "big") for i in ra)


@dataclass(frozen=True)
class SenderCommitment:
    """``Tx(B)``: the sender's selected bytes of the uncovered packet."""

    txn: int
    serial: int
    b: bytes
    sig: bytes = b""

    def message(self) -> bytes:
        return b"rsiot/B" + _u64(self.txn) + _u64(self.serial) + self.b

    @classmethod
    def create(cls, sk: bytes, txn: int, serial: int, b: bytes) -> SenderCommitment:
        unsigned = cls(txn, serial, bytes(b))
        return cls(txn, serial, bytes(b), prim.sign(sk, unsigned.message()))

    def signer(self) -> bytes:
        return prim.recover(self.message(), self.sig)


@dataclass(frozen=True)
class ReceiverCommitment:
    """``Tx(B', Ra')``: the receiver's bytes of the covered packet plus indices."""

    txn: int
    serial: int
    b_prime: bytes
    ra: tuple[int, ...]
    sig: bytes = b""

    def message(self) -> bytes:
        return (
            b"rsiot/B'"
            + _u64(self.txn)
            + _u64(self.serial)
            + len(self.ra).to_bytes(4, "big")
            + self.b_prime
            + _indices(self.ra)
        )

    @classmethod
    def create(
        cls, sk: bytes, txn: int, serial: int, b_prime: bytes, ra: Sequence[int]
    ) -> ReceiverCommitment:
        unsigned = cls(txn, serial, bytes(b_prime), tuple(ra))
        return cls(txn, serial, bytes(b_prime), tuple(ra), prim.sign(sk, unsigned.message()))

    def signer(self) -> bytes:
        return prim.recover(self.message(), self.sig)


@dataclass(frozen=True)
class CoverKeyReveal:
    """``Tx(PN)``: the relay's release of the cover key for one packet."""

    txn: int
    serial: int
    pn: int
    sig: bytes = b""

    def message(self) -> bytes:
        return b"rsiot/PN" + _u64(self.txn) + _u64(self.serial) + self.pn.to_bytes(32, "big")

    @classmethod
    def create(cls, sk: bytes, txn: int, serial: int, pn: int) -> CoverKeyReveal:
        unsigned = cls(txn, serial, pn)
        return cls(txn, serial, pn, prim.sign(sk, unsigned.message()))

    def signer(self) -> bytes:
        return prim.recover(self.message(), self.sig)


@dataclass(frozen=True)
class ProofTriple:
    sender: SenderCommitment
    receiver: ReceiverCommitment
    reveal: CoverKeyReveal

    @property
    def serial(self) -> int:
        return self.reveal.serial

    @property
    def txn(self) -> int:
        return self.reveal.txn


def verify_delivery(b: bytes, b_prime: bytes, ra: Sequence[int], pn: int) -> bool:
    """True iff ``b[i] ^ b_prime[i] == cover(pn)[ra[i]]`` for every i."""
    if not len(b) == len(b_prime) == len(ra):
        raise ValueError(f"length mismatch: |B|={len(b)}, |B'|={len(b_prime)}, |Ra'|={len(ra)}")
    for x, y, k in zip(b, b_prime, ra):
        if x ^ y != prim.cover_byte_at(pn, k):
            return False
    return True


class RebutOutcome(str, enum.Enum):
    REBUTTED = "rebutted"
    FAILED = "failed"


# -- the contract ------------------------------------------------------------


@dataclass
class _Config:
    min_deposit: int
    grace_period: int
    billing_window: int


class RelayContract:
    def __init__(
        self,
        ledger: Ledger,
        *,
        min_deposit: int = 1_000_000,
        grace_period: int = 10,
        billing_window: int = 10,
        address: bytes = CONTRACT_ADDRESS,
    ) -> None:
        self.ledger = ledger
        self.address = address
        self.config = _Config(min_deposit, grace_period, billing_window)
        self.users: dict[frozenset[bytes], UserInfo] = {}
        self.servers: dict[bytes, ServerInfo] = {}
        self.services: dict[int, ServiceRecord] = {}
        self.pending: dict[tuple[int, int], PendingReport] = {}
        self._next_txn = 1
        if not ledger.has_account(address):
            ledger.create_account(address)
        ledger.on_block(self._on_block)

    # -- helpers ------------------------------------------------------------

    def _gas(self, caller: bytes, operation: str, payload_len: int = 0):
        # Limit check happens before the call is accepted at all.
        self.ledger.check_gas(operation, payload_len)
        return _Call(self.ledger, caller, operation, payload_len)

    def _record(self, txn: int) -> ServiceRecord:
        try:
            return self.services[txn]
        except KeyError:
            raise NotFound(f"no service record {txn}") from None

    def escrow(self) -> int:
        return self.ledger.balance_of(self.address)

    def expected_escrow(self) -> int:
        return sum(r.balance for r in self.services.values()) + sum(
            s.deposit for s in self.servers.values()
        )

    def user_info(self, a: bytes, b: bytes) -> UserInfo | None:
        return self.users.get(frozenset((a, b)))

    # -- registration ---------------------------------------------------------

    def reg_user(self, caller: bytes, oppo_end: bytes) -> UserInfo:
        key = frozenset((caller, oppo_end))
        existing = self.users.get(key)
        op = "reg_user_open" if existing is None else "reg_user_confirm"
        with self._gas(caller, op):
            if caller == oppo_end:
                raise InvalidState("cannot pair an address with itself")
            if not self.ledger.has_account(caller):
                raise NotFound("caller has no ledger account")
            if existing is None:
                info = UserInfo(device=caller, controller=oppo_end)
                self.users[key] = info
                self.ledger.emit("UserRegistered", caller=caller, oppo_end=oppo_end, confirmed=False)
                return info
            if existing.confirmed:
                raise InvalidState("user pair already confirmed")
            if existing.device == caller:
                raise InvalidState("waiting for the other party to register")
            existing.confirmed = True
            self.ledger.emit("UserRegistered", caller=caller, oppo_end=oppo_end, confirmed=True)
            return existing

    def reg_server(self, caller: bytes, deposit: int) -> ServerInfo:
        with self._gas(caller, "reg_server"):
            if caller in self.servers:
                raise InvalidState("server already registered")
            if deposit <= 0 or deposit < self.config.min_deposit:
                raise InvalidState(f"deposit {deposit} below minimum {self.config.min_deposit}")
            self._pay_in(caller, deposit)
            info = ServerInfo(caller, deposit)
            self.servers[caller] = info
            self.ledger.emit("ServerRegistered", server=caller, deposit=deposit)
            return info

    def _pay_in(self, payer: bytes, amount: int) -> None:
        try:
            self.ledger.transfer(payer, self.address, amount)
        except LedgerError as exc:
            raise UnderFunded(str(exc)) from None

    # -- commission -------------------------------------------------------------

    def service_request(self, caller: bytes, device: bytes, controller: bytes):
        with self._gas(caller, "service_request"):
            info = self.user_info(device, controller)
            if info is None or not info.confirmed:
                raise InvalidState("user pair is not confirmed")
            return self.ledger.emit("ServiceRequest", device=device, controller=controller)

    def service_select(
        self,
        caller: bytes,
        device: bytes,
        controller: bytes,
        server: bytes,
        price: int,
        prepaid: int,
    ) -> ServiceRecord:
        with self._gas(caller, "service_select"):
            info = self.user_info(device, controller)
            if info is None or not info.confirmed:
                raise InvalidState("user pair is not confirmed")
            if server not in self.servers:
                raise NotFound("server is not registered")
            if price < 0 or prepaid < 0:
                raise InvalidState("price and prepaid must be non-negative")
            self._pay_in(caller, prepaid)
            txn = self._next_txn
            self._next_txn += 1
            record = ServiceRecord(txn, device, controller, server, price, prepaid)
            self.services[txn] = record
            self.ledger.emit(
                "ServiceSelected", txn=txn, device=device, controller=controller,
                server=server, price=price, balance=prepaid,
            )
            return record

    def service_confirm(self, caller: bytes, txn: int) -> ServiceRecord:
        with self._gas(caller, "service_confirm"):
            record = self._record(txn)
            if caller != record.server:
                raise Unauthorized("only the selected server can confirm")
            if record.status is not ServiceStatus.PENDING:
                raise InvalidState("service already confirmed")
            record.status = ServiceStatus.CONFIRMED
            self.ledger.emit("ServiceConfirmed", txn=txn, server=caller)
            return record

    # -- settlement ---------------------------------------------------------------

    def settle(self, caller: bytes, triple: ProofTriple, txn: int) -> int:
        """Pay the server for every packet up to ``triple.serial``; returns the payment."""
        receipts = [
            _Call(self.ledger, _safe_signer(triple.sender), "commitment_sender"),
            _Call(self.ledger, _safe_signer(triple.receiver), "commitment_receiver"),
            _Call(self.ledger, caller, "commitment_verify"),
        ]
        try:
            payment = self._settle(caller, triple, txn)
        except ContractError:
            for r in receipts:
                r.finish("reverted")
            raise
        for r in receipts:
            r.finish("ok")
        return payment

    def _settle(self, caller: bytes, triple: ProofTriple, txn: int) -> int:
        record = self._record(txn)
        if record.status is not ServiceStatus.CONFIRMED:
            raise InvalidState("service not confirmed")
        if caller != record.server:
            raise Unauthorized("only the service's server can settle")
        parts = (triple.sender, triple.receiver, triple.reveal)
        if any(p.txn != txn for p in parts) or len({p.serial for p in parts}) != 1:
            raise InvalidState("proof parts disagree on txn or serial")
        signers = tuple(_safe_signer(p) for p in parts)
        users = {record.controller, record.device}
        if (
            signers[0] not in users
            or signers[1] not in users - {signers[0]}
            or signers[2] != record.server
        ):
            raise BadSignature("proof signatures do not match the service record")
        if triple.serial <= record.serial:
            raise StaleSerial(f"serial {triple.serial} already settled up to {record.serial}")
        try:
            ok = verify_delivery(triple.sender.b, triple.receiver.b_prime, triple.receiver.ra, triple.reveal.pn)
        except ValueError as exc:
            raise DeliveryVerificationFailed(str(exc)) from None
        if not ok:
            raise DeliveryVerificationFailed("B xor B' does not match the cover stream")
        payment = (triple.serial - record.serial) * record.price
        if payment > record.balance:
            raise UnderFunded(f"payment {payment} exceeds prepaid balance {record.balance}")
        self.ledger.transfer(self.address, record.server, payment)
        record.balance -= payment
        record.serial = triple.serial
        self.ledger.emit("Settled", txn=txn, serial=triple.serial, payment=payment)
        return payment

    # -- decommission -------------------------------------------------------------

    def decommission(self, caller: bytes, txn: int) -> None:
        with self._gas(caller, "decommission"):
            record = self._record(txn)
            if caller not in (record.device, record.controller, record.server):
                raise Unauthorized("only parties of the service can decommission")
            if record.closing_height is not None:
                raise InvalidState("decommission already in progress")
            record.closing_height = self.ledger.height
            self.ledger.emit("Decommissioned", txn=txn, caller=caller,
                             closes_at=self.ledger.height + self.config.billing_window)

    def _on_block(self, height: int) -> None:
        for txn in sorted(self.services):
            record = self.services[txn]
            if record.closing_height is None:
                continue
            if height - record.closing_height >= self.config.billing_window:
                refund = record.balance
                self.ledger.transfer(self.address, record.device, refund)
                del self.services[txn]
                self.ledger.emit("ServiceClosed", txn=txn, refund=refund)

    # -- arbitration --------------------------------------------------------------

    def reporting(
        self, caller: bytes, txn: int, serial: int, packet: bytes, relay_sig: bytes
    ) -> PendingReport:
        with self._gas(caller, "reporting", len(packet)):
            record = self._record(txn)
            if record.status is not ServiceStatus.CONFIRMED:
                raise InvalidState("service not confirmed")
            if caller != record.device:
                raise Unauthorized("only the service's device can report")
            if (txn, serial) in self.pending:
                raise InvalidState("a report for this packet is already pending")
            try:
                origin = prim.recover(packet, relay_sig)
            except prim.InvalidSignature as exc:
                raise ReportRefused(f"unrecoverable signature: {exc}") from None
            if origin != record.server:
                raise ReportRefused("signature does not belong to the accused server")
            report = PendingReport(txn, serial, bytes(packet), self.ledger.height, caller, record.server)
            self.pending[(txn, serial)] = report
            self.ledger.emit("Reported", txn=txn, serial=serial, server=record.server,
                             packet_len=len(packet))
            return report

    def rebutting(
        self, caller: bytes, txn: int, serial: int, controller_sig: bytes, pn: int
    ) -> RebutOutcome:
        report = self.pending.get((txn, serial))
        size = len(report.packet) if report else 0
        with self._gas(caller, "rebutting", size):
            if report is None:
                raise NotFound("no pending report for this packet")
            if caller != report.server:
                raise Unauthorized("only the accused server can rebut")
            record = self._record(txn)
            uncovered = prim.apply_cover(report.packet, pn)
            try:
                origin = prim.recover(uncovered, controller_sig)
            except prim.InvalidSignature:
                origin = None
            if origin != record.controller:
                self.ledger.emit("RebutFailed", txn=txn, serial=serial)
                return RebutOutcome.FAILED
            del self.pending[(txn, serial)]
            self.ledger.emit("Rebutted", txn=txn, serial=serial)
            return RebutOutcome.REBUTTED

    def execute(self, caller: bytes, txn: int, serial: int) -> int:
        """Confiscate the reported server's deposit; returns the amount paid out."""
        with self._gas(caller, "execute"):
            report = self.pending.get((txn, serial))
            if report is None:
                raise NotFound("no pending report for this packet")
            if caller != report.reporter:
                raise Unauthorized("only the reporting device can execute")
            elapsed = self.ledger.height - report.report_height
            if elapsed <= self.config.grace_period:
                raise GracePeriodActive(
                    f"{elapsed} blocks since report, grace period is {self.config.grace_period}"
                )
            del self.pending[(txn, serial)]
            info = self.servers.pop(report.server, None)
            amount = info.deposit if info else 0
            if amount:
                self.ledger.transfer(self.address, caller, amount)
            self.ledger.emit("PenaltyExecuted", txn=txn, serial=serial, server=report.server,
                             reporter=caller, amount=amount)
            return amount

    # -- export ---------------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        return {
            "user_info": [
                {"device": u.device.hex(), "controller": u.controller.hex(), "confirmed": u.confirmed}
                for u in sorted(self.users.values(), key=lambda u: (u.device, u.controller))
            ],
            "server_info": [
                {"server": s.server.hex(), "deposit": s.deposit}
                for s in sorted(self.servers.values(), key=lambda s: s.server)
            ],
            "service_list": [
                {
                    "txn": r.txn, "serial": r.serial, "device": r.device.hex(),
                    "controller": r.controller.hex(), "server": r.server.hex(),
                    "price": r.price, "balance": r.balance, "status": r.status.value,
                    "closing_height": r.closing_height,
                }
                for _, r in sorted(self.services.items())
            ],
            "pending_reports": [
                {"txn": p.txn, "serial": p.serial, "packet": p.packet.hex(),
                 "report_height": p.report_height, "reporter": p.reporter.hex(),
                 "server": p.server.hex()}
                for _, p in sorted(self.pending.items())
            ],
            "escrow": self.escrow(),
        }


def _safe_signer(tx) -> bytes:
    try:
        return tx.signer()
    except prim.InvalidSignature:
        return b""


class _Call:
    """Gas receipt for one contract call, finalised when the call ends."""

    def __init__(self, ledger: Ledger, caller: bytes, operation: str, payload_len: int = 0):
        self.ledger = ledger
        self.caller = caller
        self.operation = operation
        self.payload_len = payload_len
        self.receipt = None

    def finish(self, status: str) -> None:
        self.receipt = self.ledger.charge_gas(self.caller, self.operation, self.payload_len, status)

    def __enter__(self) -> _Call:
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.finish("reverted" if exc_type is not None else "ok")
        return False
