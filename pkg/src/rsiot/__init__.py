"""Relay-sharing IoT access with on-chain proof of delivery, simulated."""

from .contract import RelayContract, verify_delivery
from .harness import Scenario, Transcript, gas_report, load_scenario, monte_carlo_tamper, run
from .ledger import GasTable, Ledger

__all__ = [
    "GasTable",
    "Ledger",
    "RelayContract",
    "Scenario",
    "Transcript",
    "gas_report",
    "load_scenario",
    "monte_carlo_tamper",
    "run",
    "verify_delivery",
]

__version__ = "0.1.0"
