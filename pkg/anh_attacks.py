#!/usr/bin/env python3
"""
ANH attack generators

Builds the three denial-of-service floods against an ANH chain and measures
what each one costs the validators and an honest victim:

* Tx-DoS: validly signed transfers from fresh, unfunded accounts
* Exec-DoS: a contract whose every call burns gas and pays 1 token to an
  account derived from the call, so unrelated balance queries depend on it
* Targeted-Exec-DoS: a contract whose every call burns gas and pays q tokens
  to a chosen victim, without the victim's cooperation

The attack world is a small honest economy (a payroll contract paying the
victim, the victim paying a friend) with the flood sealed in between.
"""
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil
from tqdm import tqdm

from anh_accounting import maq_answer, pay_verify
from anh_executor import observe
from anh_ledger import Ledger
from anh_log import get_logger, progress_enabled
from anh_query import Query
from anh_txindex import InvertedIndex, TxLocator, build_index
from anh_types import AccountId, Keyring, StateKey, Transaction, TxKind, make_tx
from anh_vm import GasTable, burn_digest, derive_account, reset_vm_steps, vm_steps

logger = get_logger(__name__)

DEFAULT_BURN = 5000
BLOCK_SIZE = 1000
PAYROLL = 5000
VICTIM_GENESIS = 2000
FRIEND_GENESIS = 1000
EMPLOYER_GENESIS = 20_000


class AttackKind(Enum):
    TX_DOS = "TxDoS"
    EXEC_DOS = "ExecDoS"
    TARGETED = "TargetedExecDoS"

    @classmethod
    def parse(cls, text: str) -> "AttackKind":
        aliases = {"txdos": cls.TX_DOS, "execdos": cls.EXEC_DOS, "targeted": cls.TARGETED, "targetedexecdos": cls.TARGETED}
        key = text.replace("-", "").replace("_", "").lower()
        if key not in aliases:
            raise ValueError(f"unknown attack kind '{text}'")
        return aliases[key]


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind
    count: int
    burn: int = DEFAULT_BURN
    victim: Optional[AccountId] = None
    q: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("attack count must be >= 0")
        if self.burn < 0 or self.q < 0:
            raise ValueError("burn and q must be >= 0")
        if (self.kind == AttackKind.TARGETED) != (self.victim is not None):
            raise ValueError("a victim is required for TargetedExecDoS and only for it")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_tx_dos(keyring: Keyring, count: int, gas: GasTable, recipient: Optional[AccountId] = None) -> List[Transaction]:
    """count signed transfers, each from a brand-new account with no tokens"""
    target = recipient or keyring.fresh_account("txdos-sink")
    txs = []
    for i in tqdm(range(count), desc="tx-dos", unit="tx", disable=not progress_enabled() or count < 1000):
        sender = keyring.fresh_account(f"txdos-{i}")
        txs.append(make_tx(keyring, sender, 0, TxKind.TRANSFER, target, value=1, gas_limit=gas.intrinsic_gas(TxKind.TRANSFER)))
    return txs


def exec_dos_code(burn: int) -> str:
    return f"BURN {burn}\nDERIVE_ACCOUNT\nPUSH 1\nTRANSFER\nHALT"


def targeted_code(burn: int, victim: AccountId, q: int) -> str:
    return f"BURN {burn}\nPUSH {q}\nTRANSFER {victim}\nHALT"


def _call_gas(gas: GasTable, ops: Sequence[str], burn: int) -> int:
    total = gas.intrinsic_gas(TxKind.CONTRACT_CALL) + max(burn, gas.ops["BURN"])
    return total + sum(gas.ops[op] for op in ops)


def _deploy(keyring: Keyring, funder: AccountId, nonce: int, code: str, value: int, gas: GasTable) -> Tuple[Transaction, AccountId]:
    contract = AccountId.contract_address(funder, nonce)
    tx = make_tx(
        keyring, funder, nonce, TxKind.CONTRACT_CREATE, contract,
        value=value, gas_limit=gas.intrinsic_gas(TxKind.CONTRACT_CREATE), payload=code,
    )
    return tx, contract


def gen_exec_dos(
    keyring: Keyring,
    funder: AccountId,
    burn: int,
    count: int,
    gas: GasTable,
    nonce: int = 0,
    gas_limit: Optional[int] = None,
) -> Tuple[Transaction, List[Transaction]]:
    """
    Deploy the Exec-DoS contract and count calls to it.

    Each call pays 1 token to derive_account(burn digest, call seed). The
    call seed ignores the write set, so the payee is computed and declared
    before signing.

    Returns:
        (deployment, calls)
    """
    deploy, contract = _deploy(keyring, funder, nonce, exec_dos_code(burn), count, gas)
    limit = gas_limit if gas_limit is not None else _call_gas(gas, ("DERIVE_ACCOUNT", "PUSH", "TRANSFER", "HALT"), burn)
    calls = []
    for i in tqdm(range(count), desc="exec-dos", unit="tx", disable=not progress_enabled() or count < 1000):
        call_nonce = nonce + 1 + i
        probe = Transaction(
            sender=funder, nonce=call_nonce, kind=TxKind.CONTRACT_CALL, recipient=contract,
            value=0, gas_limit=limit, gas_price=1, payload="", declared_write_set=frozenset(),
        )
        payee = derive_account(burn_digest(burn, probe.seed), probe.seed)
        calls.append(make_tx(
            keyring, funder, call_nonce, TxKind.CONTRACT_CALL, contract,
            gas_limit=limit, writes=[StateKey.balance(payee)],
        ))
    return deploy, calls


def gen_targeted(
    keyring: Keyring,
    funder: AccountId,
    victim: AccountId,
    burn: int,
    count: int,
    q: int,
    gas: GasTable,
    nonce: int = 0,
) -> Tuple[Transaction, List[Transaction]]:
    """Deploy a contract that burns then pays q to the victim; count calls to it"""
    deploy, contract = _deploy(keyring, funder, nonce, targeted_code(burn, victim, q), q * count, gas)
    limit = _call_gas(gas, ("PUSH", "TRANSFER", "HALT"), burn)
    calls = [
        make_tx(keyring, funder, nonce + 1 + i, TxKind.CONTRACT_CALL, contract, gas_limit=limit, writes=[StateKey.balance(victim)])
        for i in tqdm(range(count), desc="targeted", unit="tx", disable=not progress_enabled() or count < 1000)
    ]
    return deploy, calls


# ---------------------------------------------------------------------------
# Attack world and metrics
# ---------------------------------------------------------------------------

@dataclass
class AttackMetrics:
    attack: str
    count: int
    seed: int
    admission_rejects: int = 0
    vm_steps_during_consensus: int = 0
    victim_maq_gas: int = 0
    victim_pay_gas: int = 0
    victim_exact_balance_gas: int = 0
    sample_exact_balance_gas: Optional[int] = None
    admission_latency_us: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "attack": self.attack,
            "count": self.count,
            "seed": self.seed,
            "admission_rejects": self.admission_rejects,
            "vm_steps_during_consensus": self.vm_steps_during_consensus,
            "victim_maq_gas": self.victim_maq_gas,
            "victim_pay_gas": self.victim_pay_gas,
            "victim_exact_balance_gas": self.victim_exact_balance_gas,
        }
        if self.sample_exact_balance_gas is not None:
            out["sample_exact_balance_gas"] = self.sample_exact_balance_gas
        return out


@dataclass
class AttackRun:
    config: AttackConfig
    keyring: Keyring
    ledger: Ledger
    index: InvertedIndex
    accounts: Dict[str, AccountId]
    payroll_call: Transaction
    payment: Transaction
    metrics: AttackMetrics
    flood: List[Transaction] = field(default_factory=list)


def _treasury_funds(config: AttackConfig, gas: GasTable) -> int:
    per_call = _call_gas(gas, ("DERIVE_ACCOUNT", "PUSH", "TRANSFER", "HALT"), config.burn)
    payout = config.q if config.kind == AttackKind.TARGETED else 1
    return gas.intrinsic_gas(TxKind.CONTRACT_CREATE) + config.count * (per_call + payout) + 1


def _chunks(txs: List[Transaction], size: int) -> List[List[Transaction]]:
    return [txs[i:i + size] for i in range(0, len(txs), size)]


def _latency_summary(samples: List[float]) -> Dict[str, float]:
    if not samples:
        return {}
    window = min(100, len(samples))
    head = float(np.median(samples[:window])) * 1e6
    tail = float(np.median(samples[-window:])) * 1e6
    return {"first": round(head, 3), "last": round(tail, 3), "ratio": round(tail / head, 3) if head else 0.0}


def resource_probe() -> Dict[str, float]:
    """Resident memory and CPU time of this process"""
    proc = psutil.Process()
    cpu = proc.cpu_times()
    return {"rss_mb": round(proc.memory_info().rss / (1024 * 1024), 1), "cpu_s": round(cpu.user + cpu.system, 2)}


def run_attack(config: AttackConfig, gas: Optional[GasTable] = None, block_size: int = BLOCK_SIZE) -> AttackRun:
    """
    Seal the honest economy with the flood in the middle, then measure.

    Blocks: payroll deployment, payroll payout to the victim, the flood,
    the victim's payment to a friend. Θ for every victim-side check is the
    payroll income alone.
    """
    gas = gas or GasTable.load()
    keyring = Keyring(config.seed)
    employer = AccountId.from_name(f"employer-{config.seed}")
    friend = AccountId.from_name(f"friend-{config.seed}")
    treasury = AccountId.from_name(f"adversary-treasury-{config.seed}")
    victim = config.victim or AccountId.from_name(f"victim-{config.seed}")
    accounts = {"employer": employer, "friend": friend, "treasury": treasury, "victim": victim}

    genesis = {employer: EMPLOYER_GENESIS, friend: FRIEND_GENESIS, victim: VICTIM_GENESIS}
    if config.kind != AttackKind.TX_DOS and config.count:
        genesis[treasury] = _treasury_funds(config, gas)
    ledger = Ledger.genesis(genesis, keyring, gas)

    payroll_deploy, payroll = _deploy(keyring, employer, 0, f"PUSH {PAYROLL}\nTRANSFER {victim}\nHALT", PAYROLL, gas)
    payroll_call = make_tx(
        keyring, employer, 1, TxKind.CONTRACT_CALL, payroll,
        gas_limit=_call_gas(gas, ("PUSH", "TRANSFER", "HALT"), 0), writes=[StateKey.balance(victim)],
    )
    ledger.seal_block([payroll_deploy])
    ledger.seal_block([payroll_call])

    metrics = AttackMetrics(config.kind.value, config.count, config.seed)
    flood: List[Transaction] = []
    if config.kind == AttackKind.TX_DOS:
        flood = gen_tx_dos(keyring, config.count, gas, recipient=victim)
    elif config.kind == AttackKind.EXEC_DOS and config.count:
        deploy, calls = gen_exec_dos(keyring, treasury, config.burn, config.count, gas)
        flood = [deploy] + calls
    elif config.kind == AttackKind.TARGETED and config.count:
        deploy, calls = gen_targeted(keyring, treasury, victim, config.burn, config.count, config.q, gas)
        flood = [deploy] + calls

    reset_vm_steps()
    latencies: List[float] = []
    admitted: List[Transaction] = []
    for tx in flood:
        started = time.perf_counter()
        decision = ledger.admit(tx) if config.kind == AttackKind.TX_DOS else None
        if decision is not None:
            latencies.append(time.perf_counter() - started)
            if not decision.accepted:
                metrics.admission_rejects += 1
                continue
        admitted.append(tx)
    if config.kind == AttackKind.TX_DOS:
        admitted, rejected = ledger.filter_admissible(admitted)
        metrics.admission_rejects += len(rejected)
    for chunk in _chunks(admitted, block_size):
        ledger.seal_block(chunk)
    payment = make_tx(
        keyring, victim, 0, TxKind.TRANSFER, friend,
        value=PAYROLL, gas_limit=gas.intrinsic_gas(TxKind.TRANSFER),
    )
    ledger.seal_block([payment])
    metrics.vm_steps_during_consensus = vm_steps()
    metrics.admission_latency_us = _latency_summary(latencies)

    index = build_index(ledger.blocks)
    theta = [payroll_call.tx_id]
    decision = pay_verify(payment, theta, ledger, index)
    metrics.victim_pay_gas = decision.gas_executed
    maq = maq_answer(Query.balance_at_least(victim, VICTIM_GENESIS + PAYROLL - payment.total_expense), ledger, index, theta=theta)
    metrics.victim_maq_gas = maq.gas_executed
    metrics.victim_exact_balance_gas = observe(Query.exact_balance(victim), ledger, index).gas_executed
    if config.kind == AttackKind.EXEC_DOS and config.count:
        last_call = flood[-1]
        payee = next(k.account for k in last_call.declared_write_set if k.account not in (treasury, last_call.recipient))
        metrics.sample_exact_balance_gas = observe(Query.exact_balance(payee), ledger, index).gas_executed

    probe = resource_probe()
    logger.info(
        f"{config.kind.value} x{config.count}: rejects {metrics.admission_rejects}, "
        f"consensus VM steps {metrics.vm_steps_during_consensus}, victim MAQ gas {metrics.victim_maq_gas}, "
        f"exact balance gas {metrics.victim_exact_balance_gas} (rss {probe['rss_mb']} MB, cpu {probe['cpu_s']} s)"
    )
    return AttackRun(config, keyring, ledger, index, accounts, payroll_call, payment, metrics, flood)


def growth_fit(sizes: Sequence[int], values: Sequence[int]) -> Tuple[float, float]:
    """Least-squares line of values against sizes: (slope, r squared)"""
    if len(sizes) < 2:
        return 0.0, 1.0
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(values, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return float(slope), 1.0
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    return float(slope), 1.0 - ss_res / ss_tot


def growth_slope(sizes: Sequence[int], values: Sequence[int]) -> float:
    return growth_fit(sizes, values)[0]


def attack_scaling(kind: AttackKind, sizes: Sequence[int], burn: int = DEFAULT_BURN, seed: int = 0, gas: Optional[GasTable] = None) -> Dict[str, Any]:
    """Run one attack at several flood sizes and fit how victim costs grow"""
    runs = []
    for size in sizes:
        victim = AccountId.from_name(f"victim-{seed}") if kind == AttackKind.TARGETED else None
        runs.append(run_attack(AttackConfig(kind, size, burn=burn, victim=victim, seed=seed), gas).metrics)
    maq = [m.victim_maq_gas for m in runs]
    pay = [m.victim_pay_gas for m in runs]
    exact = [m.victim_exact_balance_gas for m in runs]
    exact_slope, exact_r2 = growth_fit(sizes, exact)
    return {
        "attack": kind.value,
        "sizes": list(sizes),
        "victim_maq_gas": maq,
        "victim_pay_gas": pay,
        "victim_exact_balance_gas": exact,
        "maq_slope": growth_slope(sizes, maq),
        "exact_balance_slope": exact_slope,
        "exact_balance_r2": round(exact_r2, 6),
        "runs": [m.to_dict() for m in runs],
    }


def flood_locators(run: AttackRun) -> List[TxLocator]:
    ids = {tx.tx_id for tx in run.flood}
    out = []
    for position, tx in run.ledger.iter_txs():
        if tx.tx_id in ids:
            out.append(TxLocator(position.height, position.offset, tx.tx_id))
    return out
