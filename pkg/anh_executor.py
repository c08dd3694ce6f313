#!/usr/bin/env python3
"""
ANH executor

Two ways to get at the world state:

* eager: replay every committed tx from genesis, the way a traditional chain
  does. This is the oracle every lazy answer is checked against.
* lazy: compute the provenance closure of the keys a query needs, from the
  declared write sets in the index, and execute only those txs against a
  partial state.

A closure is built with a worklist. Each frontier key remembers the latest
position its value is needed at, and only txs touching the key before that
position are pulled in. Every pulled tx needs its read keys at its own
position. With a zero-cost ledger supplied, transfers it already confirms are
applied statically and do not pull in their sender's history.
"""
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from tqdm import tqdm

from anh_errors import ClosureError, ClosureExceedsBudget
from anh_log import get_logger, progress_enabled
from anh_query import Query, QueryKind, evaluate_state_query
from anh_txindex import InvertedIndex, TxLocator
from anh_types import ChainPosition, KeyKind, StateKey, Transaction, TxKind, sorted_keys
from anh_vm import ExecutionReceipt, GasTable, OathClaim, apply_tx, default_value

logger = get_logger(__name__)


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------

class WorldState:
    """
    Balances, nonces, storage and code, keyed by StateKey.

    A partial state has a domain; reading outside it is a closure bug and
    raises ClosureError. Every commit made at a chain position is kept in a
    per-key history so values at earlier positions can be read back.
    """

    def __init__(self, initial: Optional[Dict[StateKey, Any]] = None, domain: Optional[Iterable[StateKey]] = None):
        self._initial: Dict[StateKey, Any] = dict(initial or {})
        self._values: Dict[StateKey, Any] = dict(self._initial)
        self._domain: Optional[FrozenSet[StateKey]] = frozenset(domain) if domain is not None else None
        self._history: Dict[StateKey, Tuple[List[ChainPosition], List[Any]]] = {}

    @classmethod
    def from_genesis(cls, ledger) -> "WorldState":
        return cls({StateKey.balance(a): v for a, v in ledger.allocations.items()})

    @classmethod
    def partial(cls, ledger, domain: Iterable[StateKey]) -> "WorldState":
        keys = frozenset(domain)
        initial = {k: ledger.genesis_allocation(k.account) for k in keys if k.kind == KeyKind.BALANCE}
        return cls(initial, keys)

    @property
    def is_partial(self) -> bool:
        return self._domain is not None

    def _check(self, key: StateKey) -> None:
        if self._domain is not None and key not in self._domain:
            raise ClosureError(f"read of {key} outside the closure frontier")

    def get(self, key: StateKey) -> Any:
        self._check(key)
        return self._values.get(key, default_value(key))

    def value_at(self, key: StateKey, position: ChainPosition) -> Any:
        """Value just before position"""
        self._check(key)
        entry = self._history.get(key)
        if entry is None:
            return self._initial.get(key, default_value(key))
        positions, values = entry
        i = bisect_left(positions, position)
        if i == 0:
            return self._initial.get(key, default_value(key))
        return values[i - 1]

    def commit(self, changes: Dict[StateKey, Any], position: Optional[ChainPosition] = None) -> None:
        for key, value in changes.items():
            self._check(key)
            self._values[key] = value
            if position is not None:
                positions, values = self._history.setdefault(key, ([], []))
                if positions and positions[-1] == position:
                    values[-1] = value
                else:
                    positions.append(position)
                    values.append(value)

    def balance(self, account) -> int:
        return self.get(StateKey.balance(account))

    def keys(self) -> List[StateKey]:
        return sorted_keys(self._values)

    @property
    def balances(self) -> Dict[Any, int]:
        return {k.account: v for k, v in self._values.items() if k.kind == KeyKind.BALANCE}

    @property
    def nonces(self) -> Dict[Any, int]:
        return {k.account: v for k, v in self._values.items() if k.kind == KeyKind.NONCE}

    @property
    def storage(self) -> Dict[Tuple[Any, str], int]:
        return {(k.account, k.slot): v for k, v in self._values.items() if k.kind == KeyKind.STORAGE}

    def snapshot(self) -> Dict[StateKey, Any]:
        """Non-default values, for diffing"""
        return {k: v for k, v in self._values.items() if v != default_value(k)}


# ---------------------------------------------------------------------------
# Eager oracle
# ---------------------------------------------------------------------------

class EagerReplay:
    """Full replay that can be advanced block by block"""

    def __init__(self, ledger, gas: Optional[GasTable] = None):
        self.ledger = ledger
        self.gas = gas or ledger.gas
        self.state = WorldState.from_genesis(ledger)
        self.receipts: List[ExecutionReceipt] = []
        self.position = ChainPosition(1, 0)

    def advance(self, upto: Optional[ChainPosition] = None) -> "EagerReplay":
        pending = [(p, tx) for p, tx in self.ledger.iter_txs(upto) if p >= self.position]
        for position, tx in tqdm(pending, desc="eager replay", unit="tx", disable=not progress_enabled() or len(pending) < 1000):
            _, receipt = apply_tx(self.state, tx, self.gas, position)
            self.receipts.append(receipt)
            self.position = ChainPosition(position.height, position.offset + 1)
        if upto is not None and upto > self.position:
            self.position = upto
        elif upto is None:
            self.position = chain_end(self.ledger)
        return self

    def receipt_for(self, tx_id: str) -> Optional[ExecutionReceipt]:
        for receipt in self.receipts:
            if receipt.tx_id == tx_id:
                return receipt
        return None


def eager_execute(ledger, upto: Optional[ChainPosition] = None, gas: Optional[GasTable] = None) -> Tuple[WorldState, List[ExecutionReceipt]]:
    """Apply every committed tx in chain order from genesis up to (not including) upto"""
    replay = EagerReplay(ledger, gas).advance(upto)
    return replay.state, replay.receipts


def chain_end(ledger) -> ChainPosition:
    return ChainPosition.after_block(ledger.height)


# ---------------------------------------------------------------------------
# Provenance closure
# ---------------------------------------------------------------------------

def read_keys(tx: Transaction) -> Set[StateKey]:
    """Keys whose value at tx's position can influence its execution"""
    keys = set(tx.declared_write_set)
    keys.add(StateKey.balance(tx.sender))
    keys.add(StateKey.nonce(tx.sender))
    if tx.kind != TxKind.TRANSFER:
        keys.add(StateKey.code(tx.recipient))
    return keys


def oath_demands(tx: Transaction, position: ChainPosition) -> List[Tuple[StateKey, ChainPosition]]:
    """Keys an oath claim's query reads, with the position they are read at"""
    if tx.kind != TxKind.OATH_CALL:
        return []
    try:
        claim = OathClaim.from_payload(tx.payload)
    except (ValueError, KeyError, TypeError, AttributeError):
        return []
    at = position if claim.query.at is None else min(claim.query.at, position)
    return [(k, at) for k in claim.query.seed_keys()]


@dataclass
class ProvenanceClosure:
    txs: List[TxLocator]
    total_gas: int
    frontier_keys: FrozenSet[StateKey]
    need: Dict[StateKey, ChainPosition] = field(default_factory=dict)
    static: FrozenSet[str] = frozenset()
    domain: FrozenSet[StateKey] = frozenset()
    gas_used: Optional[int] = None

    @property
    def tx_ids(self) -> List[str]:
        return [loc.tx_id for loc in self.txs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "txs": [loc.to_dict() for loc in self.txs],
            "total_gas": self.total_gas,
            "gas_used": self.gas_used,
            "frontier_keys": [str(k) for k in sorted_keys(self.frontier_keys)],
            "static": sorted(self.static),
        }


class ClosureBuilder:
    """
    Worklist fixpoint over (key, need position) pairs.

    Args:
        ledger: Source of the transactions behind the locators
        index: Inverted index covering the chain
        zero_cost: When given, transfers it confirms are applied statically
    """

    def __init__(self, ledger, index: InvertedIndex, zero_cost=None):
        self.ledger = ledger
        self.index = index
        self.zero_cost = zero_cost
        self.need: Dict[StateKey, ChainPosition] = {}
        self._pulled: Dict[StateKey, int] = {}
        self._work: Deque[StateKey] = deque()
        self._members: Dict[str, TxLocator] = {}
        self._candidates: Set[str] = set()

    def demand(self, key: StateKey, at: ChainPosition) -> None:
        current = self.need.get(key)
        if current is None or at > current:
            self.need[key] = at
            self._work.append(key)

    def demand_tx(self, locator: TxLocator, skip: Iterable[StateKey] = ()) -> None:
        """Pull in one tx as a seed; its read keys in skip are not demanded"""
        self._add(locator, frozenset(skip))
        self._drain()

    def _add(self, locator: TxLocator, skip: FrozenSet[StateKey] = frozenset()) -> None:
        if locator.tx_id in self._members:
            return
        self._members[locator.tx_id] = locator
        tx = self.ledger.tx_at(locator.position)
        if self.zero_cost is not None and tx.kind == TxKind.TRANSFER and self.zero_cost.is_confirmed(tx.tx_id):
            self._candidates.add(tx.tx_id)
            return
        for key in read_keys(tx):
            if key not in skip:
                self.demand(key, locator.position)
        for key, at in oath_demands(tx, locator.position):
            self.demand(key, at)

    def _drain(self) -> None:
        while self._work:
            key = self._work.popleft()
            postings = self.index.txs_touching(key, self.need[key])
            start = self._pulled.get(key, 0)
            self._pulled[key] = len(postings)
            for locator in postings[start:]:
                self._add(locator)

    def build(self) -> ProvenanceClosure:
        self._drain()
        txs = sorted(self._members.values())
        static: Set[str] = set()
        domain: Set[StateKey] = set(self.need)
        total_gas = 0
        for locator in txs:
            tx = self.ledger.tx_at(locator.position)
            total_gas += tx.gas_limit
            domain.update(tx.touched_keys())
            domain.update(read_keys(tx))
            if locator.tx_id in self._candidates:
                sender_need = self.need.get(StateKey.balance(tx.sender))
                if sender_need is None or sender_need <= locator.position:
                    static.add(locator.tx_id)
        return ProvenanceClosure(
            txs=txs,
            total_gas=total_gas,
            frontier_keys=frozenset(self.need),
            need=dict(self.need),
            static=frozenset(static),
            domain=frozenset(domain),
        )


def dependency_closure(key: StateKey, at: ChainPosition, index: InvertedIndex, ledger, zero_cost=None) -> ProvenanceClosure:
    builder = ClosureBuilder(ledger, index, zero_cost)
    builder.demand(key, at)
    return builder.build()


# ---------------------------------------------------------------------------
# Closure execution
# ---------------------------------------------------------------------------

@dataclass
class ClosureRun:
    closure: ProvenanceClosure
    state: WorldState
    receipts: Dict[str, ExecutionReceipt]
    txs_executed: int = 0
    gas_executed: int = 0


def _apply_static(state: WorldState, tx: Transaction, position: ChainPosition) -> None:
    """Effect of a zero-cost-confirmed transfer on keys other than the sender balance"""
    nonce_key = StateKey.nonce(tx.sender)
    changes: Dict[StateKey, Any] = {nonce_key: state.get(nonce_key) + 1}
    if tx.recipient != tx.sender:
        recipient_key = StateKey.balance(tx.recipient)
        changes[recipient_key] = state.get(recipient_key) + tx.value
    state.commit(changes, position)


def execute_closure(closure: ProvenanceClosure, ledger, gas: Optional[GasTable] = None, budget: Optional[int] = None) -> ClosureRun:
    """Run a closure's member txs in chain order against a partial state"""
    gas = gas or ledger.gas
    state = WorldState.partial(ledger, closure.domain)
    run = ClosureRun(closure, state, {})
    for locator in closure.txs:
        tx = ledger.tx_at(locator.position)
        if locator.tx_id in closure.static:
            _apply_static(state, tx, locator.position)
            continue
        _, receipt = apply_tx(state, tx, gas, locator.position)
        run.receipts[tx.tx_id] = receipt
        run.txs_executed += 1
        run.gas_executed += receipt.gas_used
        if budget is not None and run.gas_executed > budget:
            raise ClosureExceedsBudget(budget, run.gas_executed)
    closure.gas_used = run.gas_executed
    return run


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryResult:
    result: Any
    txs_executed: int = 0
    gas_executed: int = 0
    path: str = "execution"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "result": self.result,
            "txs_executed": self.txs_executed,
            "gas_executed": self.gas_executed,
            "path": self.path,
        }


def observe(query: Query, ledger, index: InvertedIndex, budget: Optional[int] = None, zero_cost=None) -> QueryResult:
    """
    Answer a query by executing only its provenance closure.

    Args:
        query: Any Query
        ledger: Chain snapshot
        index: Index over the same chain
        budget: Optional gas budget; ClosureExceedsBudget when exceeded
        zero_cost: Zero-cost ledger for the BalanceAtLeast fast path
                   (defaults to the ledger's own)

    Returns:
        QueryResult with the cost report
    """
    zc = zero_cost if zero_cost is not None else ledger.zero_cost
    end = chain_end(ledger)

    if query.kind == QueryKind.TRANSFER_SUCCEEDED:
        position = ledger.locate(query.tx_id)
        if position is None:
            return QueryResult(False, path="unknown_tx")
        builder = ClosureBuilder(ledger, index)
        builder.demand_tx(TxLocator(position.height, position.offset, query.tx_id))
        run = execute_closure(builder.build(), ledger, budget=budget)
        receipt = run.receipts[query.tx_id]
        return QueryResult(receipt.applied, run.txs_executed, run.gas_executed)

    at = end if query.at is None or query.at > end else query.at
    if query.kind == QueryKind.BALANCE_AT_LEAST and zc.balance_at(query.account, at) >= query.amount:
        return QueryResult(True, path="zero_cost")

    builder = ClosureBuilder(ledger, index)
    for key in query.seed_keys():
        builder.demand(key, at)
    closure = builder.build()
    run = execute_closure(closure, ledger, budget=budget)
    result = evaluate_state_query(query, run.state.get)
    logger.debug(f"{query.kind.value}: {len(closure.txs)} txs in closure, gas {run.gas_executed}")
    return QueryResult(result, run.txs_executed, run.gas_executed)
