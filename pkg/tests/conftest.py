"""Shared fixtures: a fixed gas table, a keyring, and scenario helpers."""
import sys
from pathlib import Path
from typing import Any, Dict

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from anh_config import DEFAULT_GAS_TABLE  # noqa: E402
from anh_ledger import Ledger  # noqa: E402
from anh_scenario import ScenarioRun, load_scenario, seal_scenario  # noqa: E402
from anh_types import AccountId, Keyring, TxKind, make_tx  # noqa: E402
from anh_vm import GasTable  # noqa: E402

SCENARIOS = ROOT / "scenarios"


@pytest.fixture(autouse=True)
def _quiet_env(monkeypatch, tmp_path):
    """Keep user or CI gas tables and log levels out of the tests"""
    monkeypatch.delenv("ANH_GAS_TABLE", raising=False)
    monkeypatch.setenv("ANH_LOG", "quiet")
    monkeypatch.setenv("HOME", str(tmp_path))


@pytest.fixture
def gas() -> GasTable:
    return GasTable.from_dict(DEFAULT_GAS_TABLE)


@pytest.fixture
def keyring() -> Keyring:
    return Keyring(7)


@pytest.fixture
def accounts() -> Dict[str, AccountId]:
    return {name: AccountId.from_name(name) for name in ("alice", "bob", "carol", "dave")}


@pytest.fixture
def ledger(keyring, gas, accounts) -> Ledger:
    return Ledger.genesis({accounts["alice"]: 3000, accounts["carol"]: 10000}, keyring, gas)


def transfer(keyring: Keyring, gas: GasTable, sender: AccountId, nonce: int, to: AccountId, value: int, **kw: Any):
    return make_tx(keyring, sender, nonce, TxKind.TRANSFER, to, value=value, gas_limit=gas.intrinsic_gas(TxKind.TRANSFER), **kw)


def sealed(name: str) -> ScenarioRun:
    return seal_scenario(load_scenario(SCENARIOS / f"{name}.json"))


@pytest.fixture
def run_of():
    return sealed
