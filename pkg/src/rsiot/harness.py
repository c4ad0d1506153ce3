"""Scenario runner, tamper Monte Carlo and gas accounting.

A scenario is an INI file::

    [scenario]
    name = honest
    seed = 7
    phases = registration, commission, relay, dispute, decommission
    packets = 100
    payload_size = 48-200
    price = 2
    ...
    [actors]
    controller = honest
    device = honest
    relay = honest
    [expect]
    relay_revenue = 200

``run`` returns a :class:`Transcript`; ``Transcript.dumps()`` is one JSON
record per line and is byte-identical across replays of the same scenario.
"""

from __future__ import annotations

import configparser
import heapq
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field, fields, is_dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import _fastpath
from . import primitives as prim
from .actors import (
    FRAME_MAGIC,
    Behavior,
    Controller,
    Device,
    KeyRelease,
    ProtocolError,
    Relay,
    SignedRecord,
    accept_all,
    contains_marker,
    flag_all,
    framed,
)
from .contract import (
    ContractError,
    ReceiverCommitment,
    RelayContract,
    SenderCommitment,
    verify_delivery,
)
from .ledger import GasTable, Ledger, LedgerError

__all__ = [
    "ScenarioError",
    "Scenario",
    "Transcript",
    "Scheduler",
    "builtin_scenarios",
    "load_scenario",
    "run",
    "monte_carlo_tamper",
    "tamper_detection_oracle",
    "GasReport",
    "gas_report",
]

PHASES = ("registration", "commission", "relay", "dispute", "decommission")
ROLE_RANK = {"controller": 0, "relay": 1, "device": 2, "chain": 3}


class ScenarioError(ValueError):
    pass


# -- scenario -----------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int = 0
    phases: tuple[str, ...] = PHASES
    packets: int = 10
    payload_size: tuple[int, int] = (48, 200)
    price: int = 2
    deposit: int = 1_000_000
    prepaid: int = 10_000
    funds: int = 10_000_000
    grace_period: int = 10
    billing_window: int = 10
    commitment_len: int = prim.DEFAULT_COMMITMENT_LEN
    blocks_per_packet: int = 1
    cash_out_every: int = 0
    inject_at: int = 0
    predicate: str = "framed"
    controller: Behavior = Behavior()
    device: Behavior = Behavior()
    relay: Behavior = Behavior()
    gas_table: str | None = None
    expect: tuple[tuple[str, str], ...] = ()
    description: str = ""

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)

    @classmethod
    def from_config(cls, parser: configparser.ConfigParser, base_dir: Path | None = None) -> Scenario:
        if not parser.has_section("scenario"):
            raise ScenarioError("missing [scenario] section")
        sec = parser["scenario"]
        try:
            phases = tuple(p.strip() for p in sec.get("phases", ",".join(PHASES)).split(",") if p.strip())
            bad = [p for p in phases if p not in PHASES]
            if bad:
                raise ScenarioError(f"unknown phases {bad}")
            size = sec.get("payload_size", "48-200")
            lo, _, hi = size.partition("-")
            payload_size = (int(lo), int(hi or lo))
            if payload_size[0] < 1 or payload_size[1] < payload_size[0]:
                raise ScenarioError(f"bad payload_size {size!r}")
            actors = parser["actors"] if parser.has_section("actors") else {}
            gas_table = sec.get("gas_table")
            if gas_table and base_dir is not None and not Path(gas_table).is_absolute():
                gas_table = str(base_dir / gas_table)
            scenario = cls(
                name=sec.get("name", "unnamed"),
                seed=sec.getint("seed", 0),
                phases=phases,
                packets=sec.getint("packets", 10),
                payload_size=payload_size,
                price=sec.getint("price", 2),
                deposit=sec.getint("deposit", 1_000_000),
                prepaid=sec.getint("prepaid", 10_000),
                funds=sec.getint("funds", 10_000_000),
                grace_period=sec.getint("grace_period", 10),
                billing_window=sec.getint("billing_window", 10),
                commitment_len=sec.getint("commitment_len", prim.DEFAULT_COMMITMENT_LEN),
                blocks_per_packet=sec.getint("blocks_per_packet", 1),
                cash_out_every=sec.getint("cash_out_every", 0),
                inject_at=sec.getint("inject_at", 0),
                predicate=sec.get("predicate", "framed"),
                controller=Behavior.parse(actors.get("controller", "honest")),
                device=Behavior.parse(actors.get("device", "honest")),
                relay=Behavior.parse(actors.get("relay", "honest")),
                gas_table=gas_table,
                expect=tuple(parser["expect"].items()) if parser.has_section("expect") else (),
                description=sec.get("description", ""),
            )
        except (ValueError, KeyError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from None
        _make_predicate(scenario.predicate)
        return scenario


def _make_predicate(spec: str):
    if spec == "framed":
        return framed
    if spec == "accept_all":
        return accept_all
    if spec == "flag_all":
        return flag_all
    if spec.startswith("marker:"):
        return contains_marker(spec[len("marker:"):].encode())
    raise ScenarioError(f"unknown predicate {spec!r}")


def builtin_scenarios() -> dict[str, Path]:
    root = resources.files("rsiot").joinpath("scenarios")
    return {
        Path(entry.name).stem: Path(str(entry))
        for entry in sorted(root.iterdir(), key=lambda e: e.name)
        if entry.name.endswith(".ini")
    }


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario file, or a builtin by name."""
    builtins = builtin_scenarios()
    path = builtins.get(str(source), Path(source))
    if not path.is_file():
        raise ScenarioError(f"no scenario file or builtin named {source!r}")
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from None
    return Scenario.from_config(parser, base_dir=path.parent)


# -- scheduler ----------------------------------------------------------------


class Scheduler:
    """Single-queue discrete-event loop.

    Ties at the same time are broken by actor rank, then by enqueue order,
    which also keeps every channel FIFO.
    """

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, int, Callable[..., Any], tuple]] = []
        self._seq = 0

    def at(self, time: int, rank: int, fn: Callable[..., Any], *args: Any) -> None:
        if time < self.now:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._queue, (time, rank, self._seq, fn, args))

    def after(self, delay: int, rank: int, fn: Callable[..., Any], *args: Any) -> None:
        self.at(self.now + delay, rank, fn, *args)

    def __len__(self) -> int:
        return len(self._queue)

    def run(self) -> None:
        while self._queue:
            time, _, _, fn, args = heapq.heappop(self._queue)
            self.now = time
            fn(*args)


# -- transcript ---------------------------------------------------------------


@dataclass
class Transcript:
    header: dict[str, Any]
    records: list[dict[str, Any]] = field(default_factory=list)
    final: dict[str, Any] = field(default_factory=dict)

    @property
    def verdict(self) -> dict[str, Any]:
        return self.final.get("verdict", {})

    @property
    def passed(self) -> bool:
        return self.final.get("expectations_met", True)

    def receipts(self) -> list[dict[str, Any]]:
        return [r for r in self.records if r["type"] == "receipt"]

    def checks(self) -> list[dict[str, Any]]:
        return [r for r in self.records if r["type"] == "check"]

    def lines(self) -> Iterable[str]:
        yield json.dumps({"type": "header", **self.header}, sort_keys=True)
        for rec in self.records:
            yield json.dumps(rec, sort_keys=True)
        yield json.dumps({"type": "final", **self.final}, sort_keys=True)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    @classmethod
    def loads(cls, text: str) -> Transcript:
        header: dict[str, Any] = {}
        final: dict[str, Any] = {}
        records = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {n}: {exc}") from None
            kind = rec.pop("type", None) if rec.get("type") in ("header", "final") else None
            if kind == "header":
                header = rec
            elif kind == "final":
                final = rec
            else:
                records.append(rec)
        return cls(header, records, final)

    @classmethod
    def load(cls, path: str | Path) -> Transcript:
        return cls.loads(Path(path).read_text())


# -- scenario execution -------------------------------------------------------


def _secret_key(rng: random.Random) -> bytes:
    while True:
        sk = rng.getrandbits(256).to_bytes(32, "big")
        try:
            prim.derive_address(sk)
            return sk
        except ValueError:
            continue


class _Run:
    PERIOD = 10  # scheduler ticks between consecutive packets

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        rng = random.Random(scenario.seed)
        self.rng = random.Random(rng.getrandbits(64))
        table = GasTable.load(scenario.gas_table) if scenario.gas_table else GasTable.default()
        self.ledger = Ledger(table)
        self.contract = RelayContract(
            self.ledger,
            min_deposit=min(scenario.deposit, 1_000_000),
            grace_period=scenario.grace_period,
            billing_window=scenario.billing_window,
        )
        enc_key = rng.getrandbits(256).to_bytes(32, "big")
        selector_seed = rng.getrandbits(256).to_bytes(32, "big")
        self.controller = Controller(_secret_key(rng), enc_key, selector_seed, scenario.commitment_len)
        self.device = Device(
            _secret_key(rng), enc_key, selector_seed,
            n=scenario.commitment_len,
            predicate=_make_predicate(scenario.predicate),
            behavior=scenario.device,
            rng=random.Random(rng.getrandbits(64)),
        )
        self.relay = Relay(_secret_key(rng), behavior=scenario.relay, rng=random.Random(rng.getrandbits(64)))
        self.roles = {
            self.controller.address: "controller",
            self.device.address: "device",
            self.relay.address: "relay",
            self.contract.address: "contract",
        }
        self.sched = Scheduler()
        self.transcript = Transcript(header=self._header())
        self._events_seen = 0
        self._receipts_seen = 0
        self.txn: int | None = None
        self.sent: dict[int, bytes] = {}
        self.delivered_records: dict[int, SignedRecord] = {}
        self.revenue = 0
        self.settle_errors: list[str] = []
        self.reports: list[tuple[int, int]] = []
        self.rebuts: dict[str, int] = defaultdict(int)
        self.penalty = 0
        self.relay_balance_before_dispute: int | None = None
        self.refund = 0
        self.reselect_ok: bool | None = None

    def _header(self) -> dict[str, Any]:
        sc = self.sc
        table = self.ledger.gas_table
        return {
            "scenario": sc.name,
            "seed": sc.seed,
            "phases": list(sc.phases),
            "packets": sc.packets,
            "actors": {"controller": str(sc.controller), "device": str(sc.device), "relay": str(sc.relay)},
            "roles": {a.hex(): r for a, r in self.roles.items()},
            "gas_price_wei": table.gas_price_wei,
            "ether_usd": table.ether_usd,
            "gas_phase": dict(sorted(table.phase.items())),
        }

    # -- transcript helpers ---------------------------------------------------

    def role(self, address: bytes) -> str:
        return self.roles.get(address, address.hex())

    def log(self, record_type: str, /, **fields: Any) -> None:
        self.transcript.records.append({"type": record_type, "t": self.sched.now, **fields})

    def _sync_ledger(self) -> None:
        for ev in self.ledger.events[self._events_seen:]:
            self.transcript.records.append({"type": "event", "t": self.sched.now, **ev.to_record()})
        for rc in self.ledger.receipts[self._receipts_seen:]:
            rec = rc.to_record()
            rec["actor"] = self.role(rc.actor)
            self.transcript.records.append({"type": "receipt", "t": self.sched.now, **rec})
        self._events_seen = len(self.ledger.events)
        self._receipts_seen = len(self.ledger.receipts)

    def _check(self) -> None:
        escrow = self.contract.escrow()
        self.log(
            "check",
            height=self.ledger.height,
            escrow=escrow,
            expected_escrow=self.contract.expected_escrow(),
            supply=self.ledger.total_supply(),
            minted=self.ledger.minted,
        )

    def call(self, who: str, fn: str, thunk: Callable[[], Any]) -> tuple[bool, Any]:
        try:
            result = thunk()
            ok = True
        except (ContractError, LedgerError, ProtocolError) as exc:
            result = f"{type(exc).__name__}: {exc}"
            ok = False
        self._sync_ledger()
        self.log("call", actor=who, fn=fn, ok=ok, result=_plain(result))
        self._check()
        return ok, result

    def msg(self, src: str, dst: str, kind: str, serial: int, payload: bytes) -> None:
        self.log("msg", src=src, dst=dst, kind=kind, serial=serial, size=len(payload),
                 digest=prim.hash(payload).hex()[:16])

    def advance(self, n: int) -> None:
        if n:
            self.ledger.advance_blocks(n)
            self._sync_ledger()
            self.log("blocks", advanced=n, height=self.ledger.height)
            self._check()

    # -- phases ---------------------------------------------------------------

    def run(self) -> Transcript:
        sc = self.sc
        for actor, role in ((self.controller, "controller"), (self.device, "device"), (self.relay, "relay")):
            self.ledger.create_account(actor.address)
            self.ledger.mint(actor.address, sc.funds)
        self._sync_ledger()
        self.initial = {a: self.ledger.balance_of(a) for a in self.roles}
        self._check()
        for phase in sc.phases:
            # each phase runs to quiescence before the next one starts
            self.log("phase", name=phase)
            self.sched.after(1, ROLE_RANK["chain"], getattr(self, f"phase_{phase}"))
            self.sched.run()
        self.transcript.final = self._final()
        return self.transcript

    def phase_registration(self) -> None:
        d, c, r = self.device.address, self.controller.address, self.relay.address
        self.call("device", "reg_user", lambda: self.contract.reg_user(d, c))
        self.call("controller", "reg_user", lambda: self.contract.reg_user(c, d))
        self.call("relay", "reg_server", lambda: self.contract.reg_server(r, self.sc.deposit))

    def phase_commission(self) -> None:
        d, c, r = self.device.address, self.controller.address, self.relay.address
        ok, _ = self.call("device", "service_request", lambda: self.contract.service_request(d, d, c))
        if not ok:
            return
        # quote round: plain messages, no contract gas
        quotes = [(self.sc.price, r)]
        self.log("quote", relay=self.role(r), price=self.sc.price, deposit=self.sc.deposit)
        price, server = min(quotes)
        ok, record = self.call(
            "device", "service_select",
            lambda: self.contract.service_select(d, d, c, server, price, self.sc.prepaid),
        )
        if not ok:
            return
        ok, _ = self.call("relay", "service_confirm", lambda: self.contract.service_confirm(r, record.txn))
        if ok:
            self.txn = record.txn
            self.controller.bind(record.txn)
            self.device.bind(record.txn, r)
            self.relay.bind(record.txn, c, d)

    def phase_relay(self) -> None:
        if self.txn is None:
            self.log("skip", phase="relay", reason="no confirmed service")
            return
        start = self.sched.now + 1
        for i in range(self.sc.packets):
            self.sched.at(start + i * self.PERIOD, ROLE_RANK["controller"], self.controller_send, i + 1)
            self.sched.at(start + i * self.PERIOD + 5, ROLE_RANK["chain"], self.advance, self.sc.blocks_per_packet)
            if self.sc.cash_out_every and (i + 1) % self.sc.cash_out_every == 0:
                self.sched.at(start + i * self.PERIOD + 6, ROLE_RANK["relay"], self.cash_out)
        self.sched.at(start + self.sc.packets * self.PERIOD, ROLE_RANK["relay"], self.cash_out)

    def _payload(self) -> bytes:
        lo, hi = self.sc.payload_size
        size = self.rng.randint(lo, hi)
        if size <= len(FRAME_MAGIC):
            return self.rng.getrandbits(8 * size).to_bytes(size, "big")
        body = size - len(FRAME_MAGIC)
        return FRAME_MAGIC + self.rng.getrandbits(8 * body).to_bytes(body, "big")

    def controller_send(self, index: int) -> None:
        msg = self._payload()
        record, tx_b = self.controller.send(msg)
        self.sent[record.serial] = msg
        self.msg("controller", "relay", "data", record.serial, record.payload)
        self.sched.after(1, ROLE_RANK["relay"], self.relay_forward, record, tx_b)

    def relay_forward(self, record: SignedRecord, tx_b: SenderCommitment) -> None:
        if self.relay.behavior.kind == "inject" and record.serial == (self.sc.inject_at or 1):
            fabricated = self.rng.getrandbits(8 * len(record.payload)).to_bytes(len(record.payload), "big")
            covered = self.relay.inject(record.txn, record.serial, fabricated)
            self.log("inject", serial=record.serial, size=len(fabricated))
        else:
            covered = self.relay.forward(record, tx_b)
        if covered is None:
            self.log("drop", actor="relay", serial=record.serial)
            return
        self.msg("relay", "device", "covered", covered.serial, covered.payload)
        self.sched.after(1, ROLE_RANK["device"], self.device_receive, covered)

    def device_receive(self, covered: SignedRecord) -> None:
        tx = self.device.receive(covered)
        self.delivered_records[covered.serial] = covered
        if tx is None:
            self.log("drop", actor="device", serial=covered.serial)
            return
        self.msg("device", "relay", "commitment", tx.serial, tx.message())
        self.sched.after(1, ROLE_RANK["relay"], self.relay_release, tx)

    def relay_release(self, tx: ReceiverCommitment) -> None:
        release = self.relay.verify_and_release(tx)
        if release is None:
            self.log("withhold", serial=tx.serial)
            return
        self.msg("relay", "device", "cover_key", tx.serial, release.reveal.message())
        self.sched.after(1, ROLE_RANK["device"], self.device_finalize, release)

    def device_finalize(self, release: KeyRelease) -> None:
        serial = release.reveal.serial
        delivery = self.device.finalize(release)
        if delivery is None:
            self.log("discard", serial=serial)
            return
        self.log("deliver", serial=serial, intact=delivery.plaintext == self.sent.get(serial),
                 malicious=delivery.malicious)
        if delivery.malicious:
            record = self.delivered_records[serial]
            ok, _ = self.call("device", "reporting", lambda: self.device.report(self.contract, record))
            if ok:
                self.reports.append((record.txn, serial))

    def cash_out(self) -> None:
        ok, result = self.call("relay", "settle", lambda: self.relay.cash_out(self.contract, self.txn))
        if ok:
            self.revenue += result
        else:
            self.settle_errors.append(result.split(":")[0])

    def phase_dispute(self) -> None:
        if not self.reports:
            return
        self.relay_balance_before_dispute = self.ledger.balance_of(self.relay.address)
        self.sched.after(1, ROLE_RANK["relay"], self.relay_rebut)
        # run the clock up to the last block of the grace period, try to
        # execute, then one block later try again
        heights = [self.contract.pending[k].report_height for k in self.reports if k in self.contract.pending]
        deadline = max(heights, default=self.ledger.height) + self.sc.grace_period
        self.sched.after(2, ROLE_RANK["chain"], lambda: self.advance(max(0, deadline - self.ledger.height)))
        self.sched.after(3, ROLE_RANK["device"], self.device_execute, "early")
        self.sched.after(4, ROLE_RANK["chain"], self.advance, 1)
        self.sched.after(5, ROLE_RANK["device"], self.device_execute, "late")

    def relay_rebut(self) -> None:
        for txn, serial in self.reports:
            ok, outcome = self.call("relay", "rebutting", lambda: self.relay.rebut(self.contract, txn, serial))
            self.rebuts[outcome.value if ok else "error"] += 1

    def device_execute(self, when: str) -> None:
        d = self.device.address
        for txn, serial in self.reports:
            if (txn, serial) not in self.contract.pending:
                continue
            ok, amount = self.call("device", "execute", lambda: self.device.execute(self.contract, txn, serial))
            if ok:
                self.penalty += amount
        if when == "late" and self.penalty:
            r = self.relay.address
            ok, _ = self.call(
                "device", "service_select",
                lambda: self.contract.service_select(d, d, self.controller.address, r, self.sc.price, 0),
            )
            self.reselect_ok = ok

    def phase_decommission(self) -> None:
        if self.txn is None:
            return
        before = self.ledger.balance_of(self.device.address)
        ok, _ = self.call("device", "decommission", lambda: self.contract.decommission(self.device.address, self.txn))
        if not ok:
            return

        def close() -> None:
            self.advance(self.sc.billing_window)
            self.refund = self.ledger.balance_of(self.device.address) - before

        self.sched.after(1, ROLE_RANK["chain"], close)

    # -- results --------------------------------------------------------------

    def _final(self) -> dict[str, Any]:
        deltas = {
            self.role(a): self.ledger.balance_of(a) - self.initial[a] for a in sorted(self.initial)
        }
        delivered = [r for r in self.transcript.records if r["type"] == "deliver"]
        by_phase: dict[str, int] = defaultdict(int)
        for rc in self.ledger.receipts:
            by_phase[self.ledger.gas_table.phase.get(rc.operation, "other")] += rc.gas
        verdict: dict[str, Any] = {
            "relay_revenue": self.revenue,
            "device_refund": self.refund,
            "delivered": len(delivered),
            "intact": sum(1 for r in delivered if r["intact"]),
            "discarded": self.device.discarded,
            "withheld": self.relay.withheld,
            "settle_errors": ",".join(sorted(set(self.settle_errors))),
            "reports": len(self.reports),
            "rebutted": self.rebuts.get("rebutted", 0),
            "rebut_failed": self.rebuts.get("failed", 0),
            "penalty": self.penalty,
            "penalty_applied": self.penalty > 0,
            "server_registered": self.relay.address in self.contract.servers,
            "reselect_after_penalty": self.reselect_ok,
            "relay_dispute_delta": (
                self.ledger.balance_of(self.relay.address) - self.relay_balance_before_dispute
                if self.relay_balance_before_dispute is not None else 0
            ),
            "reporter_gas": sum(
                rc.gas for rc in self.ledger.receipts
                if rc.operation == "reporting" and rc.actor == self.device.address
            ),
            "total_gas": self.ledger.total_gas(),
            **{f"gas_{p}": g for p, g in sorted(by_phase.items())},
        }
        failures = []
        for key, expected in self.sc.expect:
            actual = verdict.get(key)
            if _render(actual) != expected.strip().lower():
                failures.append({"key": key, "expected": expected, "actual": actual})
        return {
            "verdict": verdict,
            "balance_deltas": deltas,
            "escrow_delta": deltas.get("contract", 0),
            "state": {"ledger": self.ledger.snapshot(), "contract": self.contract.snapshot()},
            "expectations_met": not failures,
            "expectation_failures": failures,
        }


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return str(value).lower()


def _plain(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value).hex()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value.value if hasattr(value, "value") else value
    if hasattr(value, "to_record"):
        return value.to_record()
    if hasattr(value, "txn") and hasattr(value, "server"):
        return {"txn": value.txn, "serial": getattr(value, "serial", None)}
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return repr(value)


def run(scenario: Scenario) -> Transcript:
    return _Run(scenario).run()


# -- tamper Monte Carlo ---------------------------------------------------------


def _trial_inputs(rng: np.random.Generator, count: int, l: int, m: int):
    packets = rng.integers(0, 256, size=(count, l), dtype=np.uint8)
    if m:
        highs = np.arange(l - m + 1, l + 1, dtype=np.int64)
        positions = _fastpath.floyd_subsets(rng.integers(0, highs, size=(count, m)), l)
        deltas = rng.integers(1, 256, size=(count, m), dtype=np.uint8)
    else:
        positions = np.zeros((count, 0), dtype=np.int64)
        deltas = np.zeros((count, 0), dtype=np.uint8)
    tampered = packets.copy()
    rows = np.repeat(np.arange(count), m)
    tampered[rows, positions.ravel()] ^= deltas.ravel()
    pns = rng.integers(0, 256, size=(count, 32), dtype=np.uint8)
    return packets, tampered, pns


def _python_trials(seed: bytes, serials, n: int, packets, tampered, pns) -> np.ndarray:
    rejected = np.zeros(len(serials), dtype=bool)
    for t, serial in enumerate(serials):
        packet = packets[t].tobytes()
        pn = int.from_bytes(pns[t].tobytes(), "big")
        ra = prim.select_indices(seed, int(serial), n, len(packet))
        b = prim.extract_bytes(packet, ra)
        covered = prim.apply_cover(tampered[t].tobytes(), pn)
        b_prime = prim.extract_bytes(covered, ra)
        rejected[t] = not verify_delivery(b, b_prime, ra, pn)
    return rejected


def monte_carlo_tamper(
    l: int,
    n: int,
    m: int,
    trials: int,
    seed: int,
    *,
    backend: str = "compiled",
    chunk: int = 10_000,
) -> float:
    """Fraction of trials in which a relay that alters ``m`` of ``l`` bytes
    before covering is caught by the ``n``-byte commitment check.

    Each trial draws a packet, ``m`` distinct positions to alter, a fresh
    cover key and a fresh selector serial. ``backend="python"`` runs the
    reference primitives on exactly the same inputs.
    """
    if l < 1 or n < 1 or trials < 1:
        raise ValueError("l, n and trials must be positive")
    if not 0 <= m <= l:
        raise ValueError("m must lie in [0, l]")
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    rng = np.random.default_rng(seed)
    selector_seed = rng.bytes(32)
    seed_arr = np.frombuffer(selector_seed, dtype=np.uint8)
    caught = 0
    for start in range(0, trials, chunk):
        count = min(chunk, trials - start)
        packets, tampered, pns = _trial_inputs(rng, count, l, m)
        serials = np.arange(start, start + count, dtype=np.int64)
        if backend == "compiled":
            rejected = _fastpath.tamper_trials(seed_arr, serials, n, packets, tampered, pns)
        else:
            rejected = _python_trials(selector_seed, serials, n, packets, tampered, pns)
        caught += int(rejected.sum())
    return caught / trials


def tamper_detection_oracle(l: int, n: int, m: int) -> float:
    return 1.0 - (1.0 - m / l) ** n


# -- gas report -----------------------------------------------------------------


@dataclass
class GasReport:
    by_operation: dict[str, int]
    by_actor: dict[str, int]
    by_phase: dict[str, int]
    total: int
    gas_price_wei: int
    ether_usd: float

    def usd(self, gas: int) -> float:
        return gas * self.gas_price_wei / 10**18 * self.ether_usd

    def lines(self) -> list[str]:
        out = [f"{'kind':<10} {'name':<22} {'gas':>10} {'usd':>9}"]
        for kind, table in (("operation", self.by_operation), ("actor", self.by_actor), ("phase", self.by_phase)):
            for name, gas in sorted(table.items()):
                out.append(f"{kind:<10} {name:<22} {gas:>10} {self.usd(gas):>9.4f}")
        out.append(f"{'total':<10} {'':<22} {self.total:>10} {self.usd(self.total):>9.4f}")
        return out


def gas_report(transcript: Transcript, *, include_reverted: bool = True) -> GasReport:
    header = transcript.header
    phase_of = header.get("gas_phase") or GasTable.default().phase
    by_op: dict[str, int] = defaultdict(int)
    by_actor: dict[str, int] = defaultdict(int)
    by_phase: dict[str, int] = defaultdict(int)
    total = 0
    for rc in transcript.receipts():
        if not include_reverted and rc.get("status") != "ok":
            continue
        gas = rc["gas"]
        by_op[rc["operation"]] += gas
        by_actor[rc["actor"]] += gas
        by_phase[phase_of.get(rc["operation"], "other")] += gas
        total += gas
    return GasReport(
        dict(by_op), dict(by_actor), dict(by_phase), total,
        int(header.get("gas_price_wei", 2 * 10**9)), float(header.get("ether_usd", 135.0)),
    )
