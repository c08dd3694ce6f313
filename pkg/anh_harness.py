#!/usr/bin/env python3
"""
ANH differential harness

Random chains plus the eager oracle. Every lazy answer must equal full
replay; every zero-cost balance must stay below the replayed balance; every
account's replayed balance must reconcile with its incomes and expenses.
"""
import random
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from tqdm import tqdm

from anh_accounting import discover_incomes
from anh_executor import EagerReplay, dependency_closure, execute_closure
from anh_ledger import Ledger
from anh_log import get_logger, progress_enabled
from anh_query import Query
from anh_txindex import InvertedIndex, build_index
from anh_types import BLACKHOLE, AccountId, ChainPosition, KeyKind, Keyring, StateKey, Transaction, TxKind, make_tx, sorted_keys
from anh_vm import GasTable, OathClaim, encode_call_args

logger = get_logger(__name__)

CONTRACT_TEMPLATES = {
    "counter": "LOAD count\nPUSH 1\nADD\nSTORE count\nHALT",
    "payout": "TRANSFER\nHALT",
    "latch": "LOAD flag\nJUMPIF 4\nPUSH 7\nSTORE flag\nHALT",
    "drain": "LOAD count\nPUSH 1\nSUB\nSTORE count\nHALT",
}


# ---------------------------------------------------------------------------
# Random chains
# ---------------------------------------------------------------------------

@dataclass
class RandomChain:
    seed: int
    ledger: Ledger
    index: InvertedIndex
    users: List[AccountId]
    contracts: Dict[AccountId, str] = field(default_factory=dict)
    rejected: int = 0


class _ChainBuilder:
    def __init__(self, rng: random.Random, ledger: Ledger, users: List[AccountId], n_contracts: int):
        self.rng = rng
        self.ledger = ledger
        self.users = users
        self.gas = ledger.gas
        self.keyring = ledger.keyring
        self.n_contracts = n_contracts
        self.contracts: Dict[AccountId, str] = {}
        self.oaths: Dict[AccountId, AccountId] = {}
        self.pending_nonce: Dict[AccountId, int] = {}

    def _nonce(self, sender: AccountId) -> int:
        nonce = self.ledger.sent_count(sender) + self.pending_nonce.get(sender, 0)
        self.pending_nonce[sender] = self.pending_nonce.get(sender, 0) + 1
        return nonce

    def _balance_hint(self, account: AccountId) -> int:
        return max(self.ledger.zero_cost.balance(account), self.ledger.genesis_allocation(account))

    def next_tx(self) -> Transaction:
        rng = self.rng
        sender = rng.choice(self.users)
        roll = rng.random()
        if len(self.contracts) < self.n_contracts and roll < 0.15:
            return self._create(sender)
        if self.contracts and roll < 0.55:
            return self._call(sender)
        if roll < 0.6:
            return self._oath(sender)
        return self._transfer(sender)

    def _transfer(self, sender: AccountId) -> Transaction:
        rng = self.rng
        recipient = rng.choice(self.users + list(self.contracts)[:1])
        value = rng.randint(0, max(1, self._balance_hint(sender) // rng.choice((2, 3, 1))))
        limit = self.gas.intrinsic_gas(TxKind.TRANSFER) + rng.choice((0, 0, 50))
        return make_tx(self.keyring, sender, self._nonce(sender), TxKind.TRANSFER, recipient, value=value, gas_limit=limit)

    def _create(self, sender: AccountId) -> Transaction:
        template = self.rng.choice(sorted(CONTRACT_TEMPLATES))
        nonce = self._nonce(sender)
        contract = AccountId.contract_address(sender, nonce)
        self.contracts[contract] = template
        value = self.rng.randint(0, max(0, self._balance_hint(sender) // 4))
        return make_tx(
            self.keyring, sender, nonce, TxKind.CONTRACT_CREATE, contract,
            value=value, gas_limit=self.gas.intrinsic_gas(TxKind.CONTRACT_CREATE), payload=CONTRACT_TEMPLATES[template],
        )

    def _call(self, sender: AccountId) -> Transaction:
        rng = self.rng
        contract = rng.choice(sorted(self.contracts, key=lambda a: a.hex))
        template = self.contracts[contract]
        writes: Set[StateKey] = set()
        payload = ""
        if template in ("counter", "drain"):
            if rng.random() < 0.9:
                writes.add(StateKey.storage(contract, "count"))
        elif template == "latch":
            if rng.random() < 0.9:
                writes.add(StateKey.storage(contract, "flag"))
        elif template == "payout":
            payee = rng.choice(self.users)
            payload = encode_call_args([payee, rng.randint(0, 300)])
            if rng.random() < 0.9:
                writes.add(StateKey.balance(payee))
        base = self.gas.intrinsic_gas(TxKind.CONTRACT_CALL)
        limit = base + rng.choice((1, 50, 500, 500))
        value = rng.choice((0, 0, rng.randint(0, 100)))
        return make_tx(
            self.keyring, sender, self._nonce(sender), TxKind.CONTRACT_CALL, contract,
            value=value, gas_limit=limit, payload=payload, writes=writes,
        )

    def _oath(self, sender: AccountId) -> Transaction:
        rng = self.rng
        owned = [c for c, owner in self.oaths.items() if owner == sender]
        if not owned:
            nonce = self._nonce(sender)
            contract = AccountId.contract_address(sender, nonce)
            self.oaths[contract] = sender
            deposit = rng.randint(0, max(0, self._balance_hint(sender) // 5))
            return make_tx(
                self.keyring, sender, nonce, TxKind.CONTRACT_CREATE, contract,
                value=deposit, gas_limit=self.gas.intrinsic_gas(TxKind.CONTRACT_CREATE), payload="HALT",
            )
        contract = owned[0]
        subject = rng.choice(self.users)
        if rng.random() < 0.5:
            query = Query.exact_balance(subject)
            result: Any = rng.randint(0, 2000)
        else:
            query = Query.balance_at_least(subject, rng.randint(0, 2000))
            result = rng.random() < 0.5
        claim = OathClaim(query, result, rng.randint(0, 200))
        limit = self.gas.intrinsic_gas(TxKind.OATH_CALL) + self.gas.ops["QUERY"]
        return make_tx(
            self.keyring, sender, self._nonce(sender), TxKind.OATH_CALL, contract,
            gas_limit=limit, payload=claim.to_payload(), writes=[StateKey.balance(BLACKHOLE)],
        )


def random_chain(
    seed: int,
    n_accounts: int = 8,
    n_contracts: int = 3,
    n_txs: int = 120,
    block_size: int = 10,
    gas: Optional[GasTable] = None,
) -> RandomChain:
    """A deterministic random chain; inadmissible txs are dropped, not sealed"""
    rng = random.Random(seed)
    gas = gas or GasTable.load()
    keyring = Keyring(seed)
    users = [AccountId.from_name(f"user-{seed}-{i}") for i in range(n_accounts)]
    funded = users[: max(2, (n_accounts * 2) // 3)]
    allocations = {u: rng.randint(2_000, 50_000) for u in funded}
    ledger = Ledger.genesis(allocations, keyring, gas)
    builder = _ChainBuilder(rng, ledger, users, n_contracts)

    rejected = 0
    made = 0
    while made < n_txs:
        size = min(block_size, n_txs - made)
        builder.pending_nonce = {}
        candidates = [builder.next_tx() for _ in range(size)]
        made += size
        kept, dropped = ledger.filter_admissible(candidates)
        rejected += len(dropped)
        ledger.seal_block(kept)
        for tx, _ in dropped:
            if tx.kind == TxKind.CONTRACT_CREATE:
                builder.contracts.pop(tx.recipient, None)
                builder.oaths.pop(tx.recipient, None)
    index = build_index(ledger.blocks)
    return RandomChain(seed, ledger, index, users, builder.contracts, rejected)


# ---------------------------------------------------------------------------
# Oracle diff
# ---------------------------------------------------------------------------

def checked_keys(ledger: Ledger, index: InvertedIndex) -> List[StateKey]:
    """Every balance and storage key the chain knows about"""
    keys: Set[StateKey] = {StateKey.balance(a) for a in ledger.allocations}
    keys.update(k for k in index.by_key if k.kind in (KeyKind.BALANCE, KeyKind.STORAGE))
    return sorted_keys(keys)


def _boundaries(ledger: Ledger, every_block: bool) -> List[ChainPosition]:
    if every_block:
        return [ChainPosition.after_block(h) for h in range(1, ledger.height + 1)]
    return [ChainPosition.after_block(ledger.height)]


def oracle_diff(ledger: Ledger, index: InvertedIndex, every_block: bool = True, keys: Optional[Sequence[StateKey]] = None) -> Dict[str, Any]:
    """
    Key-by-key comparison of lazy closure execution against full replay.

    Returns:
        {"checked", "diffs", "zero_cost_violations"}; both lists empty on success
    """
    replay = EagerReplay(ledger)
    keys = list(keys) if keys is not None else checked_keys(ledger, index)
    diffs: List[Dict[str, Any]] = []
    zc_violations: List[Dict[str, Any]] = []
    checked = 0
    points = _boundaries(ledger, every_block)
    for at in tqdm(points, desc="oracle", unit="block", disable=not progress_enabled()):
        replay.advance(at)
        for key in keys:
            expected = replay.state.get(key)
            lazy = execute_closure(dependency_closure(key, at, index, ledger), ledger).state.get(key)
            checked += 1
            if lazy != expected:
                diffs.append({"key": str(key), "at": [at.height, at.offset], "lazy": lazy, "eager": expected})
            if key.kind == KeyKind.BALANCE and key.account.is_user:
                zc = ledger.zero_cost.balance_at(key.account, at)
                if zc > expected:
                    zc_violations.append({"account": str(key.account), "at": [at.height, at.offset], "zero_cost": zc, "eager": expected})
    if diffs:
        logger.error(f"Oracle found {len(diffs)} lazy/eager differences")
    return {"checked": checked, "diffs": diffs, "zero_cost_violations": zc_violations}


def reconcile(ledger: Ledger, index: InvertedIndex, account: AccountId, upto: Optional[ChainPosition] = None) -> Tuple[int, int]:
    """
    (X0 + Σ incomes − Σ expenses, replayed balance) for an account at upto.
    """
    at = upto or ChainPosition.after_block(ledger.height)
    replay = EagerReplay(ledger).advance(at)
    incomes = discover_incomes(account, ledger, index, upto=at, with_costs=False)
    derived = ledger.genesis_allocation(account) + sum(r.amount for r in incomes) - index.total_expenses(account, at)
    return derived, replay.state.balance(account)


def sweep(seeds: Sequence[int], **chain_args) -> Dict[str, Any]:
    """Oracle diff over many random chains"""
    total_diffs = 0
    total_zc = 0
    checked = 0
    for seed in tqdm(seeds, desc="sweep", unit="chain", disable=not progress_enabled()):
        chain = random_chain(seed, **chain_args)
        result = oracle_diff(chain.ledger, chain.index)
        checked += result["checked"]
        total_diffs += len(result["diffs"])
        total_zc += len(result["zero_cost_violations"])
    return {"chains": len(seeds), "checked": checked, "diffs": total_diffs, "zero_cost_violations": total_zc}

