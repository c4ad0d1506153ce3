"""In-process stand-in for the public chain: balances, blocks, events, gas."""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

__all__ = [
    "LedgerError",
    "UnknownAccount",
    "DuplicateAccount",
    "InsufficientBalance",
    "UnknownOperation",
    "GasLimitExceeded",
    "Account",
    "LedgerEvent",
    "GasReceipt",
    "GasTable",
    "Ledger",
]

WEI_PER_ETHER = 10**18


class LedgerError(Exception):
    pass


class UnknownAccount(LedgerError):
    pass


class DuplicateAccount(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


class UnknownOperation(LedgerError):
    pass


class GasLimitExceeded(LedgerError):
    """The transaction would cost more gas than can be mined."""


@dataclass(frozen=True)
class Account:
    address: bytes
    balance: int


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    height: int
    kind: str
    payload: dict[str, Any]

    def to_record(self) -> dict[str, Any]:
        return {"seq": self.seq, "height": self.height, "kind": self.kind, **_plain(self.payload)}


@dataclass(frozen=True)
class GasReceipt:
    seq: int
    height: int
    actor: bytes
    operation: str
    payload_len: int
    gas: int
    cumulative: int
    status: str = "ok"

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "height": self.height,
            "actor": self.actor.hex(),
            "operation": self.operation,
            "payload_len": self.payload_len,
            "gas": self.gas,
            "cumulative": self.cumulative,
            "status": self.status,
        }


@dataclass
class GasTable:
    base: dict[str, int]
    per_byte: dict[str, int] = field(default_factory=dict)
    phase: dict[str, str] = field(default_factory=dict)
    reported_totals: dict[str, int] = field(default_factory=dict)
    gas_price_wei: int = 2 * 10**9
    ether_usd: float = 135.0
    tx_gas_limit: int = 3_550_000

    def __post_init__(self) -> None:
        for name, value in [*self.base.items(), *self.per_byte.items()]:
            if value < 0:
                raise ValueError(f"gas entry {name!r} is negative")
        unknown = set(self.per_byte) - set(self.base)
        if unknown:
            raise ValueError(f"per-byte entries without a base cost: {sorted(unknown)}")

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser) -> GasTable:
        pricing = parser["pricing"] if parser.has_section("pricing") else {}
        section = lambda name: dict(parser[name]) if parser.has_section(name) else {}
        return cls(
            base={k: int(v) for k, v in section("base").items()},
            per_byte={k: int(v) for k, v in section("per_byte").items()},
            phase=section("phase"),
            reported_totals={k: int(v) for k, v in section("reported_totals").items()},
            gas_price_wei=int(pricing.get("gas_price_wei", 2 * 10**9)),
            ether_usd=float(pricing.get("ether_usd", 135)),
            tx_gas_limit=int(pricing.get("tx_gas_limit", 3_550_000)),
        )

    @classmethod
    def load(cls, path: str | Path) -> GasTable:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        return cls.from_config(parser)

    @classmethod
    def default(cls) -> GasTable:
        parser = configparser.ConfigParser()
        parser.read_string(resources.files("rsiot").joinpath("data", "default_gas.ini").read_text())
        return cls.from_config(parser)

    def cost(self, operation: str, payload_len: int = 0) -> int:
        try:
            base = self.base[operation]
        except KeyError:
            raise UnknownOperation(operation) from None
        return base + self.per_byte.get(operation, 0) * payload_len

    def max_payload(self, operation: str) -> int:
        """Largest payload (bytes) for which ``operation`` stays under the limit."""
        rate = self.per_byte.get(operation, 0)
        if rate == 0:
            raise ValueError(f"{operation!r} has no per-byte term")
        return (self.tx_gas_limit - self.base[operation]) // rate

    def to_usd(self, gas: int) -> float:
        return gas * self.gas_price_wei / WEI_PER_ETHER * self.ether_usd


def _plain(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class Ledger:
    """Accounts, a block counter, an append-only event log and gas receipts.

    All mutation goes through the methods below, called from a single
    command stream. Gas is metered for reporting only and is never deducted
    from balances.
    """

    def __init__(self, gas_table: GasTable | None = None) -> None:
        self.gas_table = gas_table or GasTable.default()
        self.height = 0
        self.minted = 0
        self._balances: dict[bytes, int] = {}
        self.events: list[LedgerEvent] = []
        self.receipts: list[GasReceipt] = []
        self._gas_by_actor: dict[bytes, int] = {}
        self._seq = 0
        self._block_listeners: list[Callable[[int], None]] = []

    # -- accounts -----------------------------------------------------------

    def create_account(self, address: bytes) -> Account:
        if address in self._balances:
            raise DuplicateAccount(address.hex())
        self._balances[address] = 0
        return Account(address, 0)

    def has_account(self, address: bytes) -> bool:
        return address in self._balances

    def account(self, address: bytes) -> Account:
        return Account(address, self.balance_of(address))

    def balance_of(self, address: bytes) -> int:
        try:
            return self._balances[address]
        except KeyError:
            raise UnknownAccount(address.hex()) from None

    def balances(self) -> dict[bytes, int]:
        return dict(self._balances)

    def total_supply(self) -> int:
        return sum(self._balances.values())

    def mint(self, address: bytes, amount: int) -> int:
        if amount < 0:
            raise ValueError("cannot mint a negative amount")
        balance = self.balance_of(address)
        self._balances[address] = balance + amount
        self.minted += amount
        return balance + amount

    def transfer(self, src: bytes, dst: bytes, amount: int) -> None:
        if amount < 0:
            raise ValueError("cannot transfer a negative amount")
        have = self.balance_of(src)
        self.balance_of(dst)
        if have < amount:
            raise InsufficientBalance(f"{src.hex()} holds {have}, needs {amount}")
        self._balances[src] = have - amount
        self._balances[dst] += amount

    # -- blocks and events --------------------------------------------------

    def on_block(self, listener: Callable[[int], None]) -> None:
        self._block_listeners.append(listener)

    def advance_blocks(self, n: int = 1) -> int:
        if n < 0:
            raise ValueError("block count must be non-negative")
        for _ in range(n):
            self.height += 1
            for listener in self._block_listeners:
                listener(self.height)
        return self.height

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def emit(self, kind: str, **payload: Any) -> LedgerEvent:
        event = LedgerEvent(self._next_seq(), self.height, kind, payload)
        self.events.append(event)
        return event

    # -- gas ----------------------------------------------------------------

    def check_gas(self, operation: str, payload_len: int = 0) -> int:
        gas = self.gas_table.cost(operation, payload_len)
        if gas > self.gas_table.tx_gas_limit:
            raise GasLimitExceeded(
                f"{operation} with {payload_len} payload bytes needs {gas} gas, "
                f"limit is {self.gas_table.tx_gas_limit}"
            )
        return gas

    def charge_gas(
        self, actor: bytes, operation: str, payload_len: int = 0, status: str = "ok"
    ) -> GasReceipt:
        gas = self.check_gas(operation, payload_len)
        total = self._gas_by_actor.get(actor, 0) + gas
        self._gas_by_actor[actor] = total
        receipt = GasReceipt(self._next_seq(), self.height, actor, operation, payload_len, gas, total, status)
        self.receipts.append(receipt)
        return receipt

    def gas_used_by(self, actor: bytes) -> int:
        return self._gas_by_actor.get(actor, 0)

    def total_gas(self) -> int:
        return sum(r.gas for r in self.receipts)

    # -- export -------------------------------------------------------------

    def records(self) -> list[dict[str, Any]]:
        """Events and receipts merged in emission order."""
        merged = [("event", e.seq, e.to_record()) for e in self.events]
        merged += [("receipt", r.seq, r.to_record()) for r in self.receipts]
        merged.sort(key=lambda item: item[1])
        return [{"type": kind, **rec} for kind, _, rec in merged]

    def dump_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.records())

    def snapshot(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "minted": self.minted,
            "balances": {a.hex(): b for a, b in sorted(self._balances.items())},
            "gas_by_actor": {a.hex(): g for a, g in sorted(self._gas_by_actor.items())},
        }
