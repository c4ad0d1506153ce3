from __future__ import annotations

import random
from dataclasses import dataclass

import pytest
from hypothesis import HealthCheck, settings

from rsiot import primitives as prim
from rsiot.actors import FRAME_MAGIC, Behavior, Controller, Device, Relay, framed
from rsiot.contract import RelayContract
from rsiot.ledger import Ledger

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FUNDS = 10_000_000
DEPOSIT = 1_000_000


def keypair(rng: random.Random) -> tuple[bytes, bytes]:
    sk = rng.getrandbits(256).to_bytes(32, "big")
    return sk, prim.derive_address(sk)


@dataclass
class World:
    ledger: Ledger
    contract: RelayContract
    controller: Controller
    device: Device
    relay: Relay
    txn: int

    def exchange(self, msg: bytes):
        """Push one message through all four protocol steps without reporting."""
        record, tx_b = self.controller.send(msg)
        covered = self.relay.forward(record, tx_b)
        tx_b_prime = self.device.receive(covered)
        release = self.relay.verify_and_release(tx_b_prime)
        delivery = self.device.finalize(release) if release else None
        return record, covered, tx_b_prime, release, delivery


def make_world(
    seed: int = 0,
    *,
    device_behavior: Behavior = Behavior(),
    relay_behavior: Behavior = Behavior(),
    n: int = prim.DEFAULT_COMMITMENT_LEN,
    price: int = 2,
    prepaid: int = 10_000,
    predicate=framed,
    grace_period: int = 10,
) -> World:
    rng = random.Random(seed)
    c_sk, d_sk, r_sk = (rng.getrandbits(256).to_bytes(32, "big") for _ in range(3))
    enc_key, sel_seed = rng.randbytes(32), rng.randbytes(32)
    ledger = Ledger()
    contract = RelayContract(ledger, grace_period=grace_period)
    controller = Controller(c_sk, enc_key, sel_seed, n)
    device = Device(d_sk, enc_key, sel_seed, n=n, predicate=predicate, behavior=device_behavior,
                    rng=random.Random(seed + 1))
    relay = Relay(r_sk, behavior=relay_behavior, rng=random.Random(seed + 2))
    for who in (controller, device, relay):
        ledger.create_account(who.address)
        ledger.mint(who.address, FUNDS)
    contract.reg_user(device.address, controller.address)
    contract.reg_user(controller.address, device.address)
    contract.reg_server(relay.address, DEPOSIT)
    contract.service_request(device.address, device.address, controller.address)
    rec = contract.service_select(device.address, device.address, controller.address,
                                  relay.address, price, prepaid)
    contract.service_confirm(relay.address, rec.txn)
    controller.bind(rec.txn)
    device.bind(rec.txn, relay.address)
    relay.bind(rec.txn, controller.address, device.address)
    return World(ledger, contract, controller, device, relay, rec.txn)


def frame(body: bytes) -> bytes:
    return FRAME_MAGIC + body


@pytest.fixture
def world() -> World:
    return make_world()


@pytest.fixture
def keys():
    rng = random.Random(1234)
    return [keypair(rng) for _ in range(4)]


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
