#!/usr/bin/env python3
"""
ANH computational accounting

Income classification and income cost, balance lower bounds, selection of the
income set Θ a payer presents, payment verification, the accountant's
deposit-backed oath contract, and minimal accounting queries.

Balance bookkeeping used throughout:

    balance(x) = X0 + Σ incomes(x) − Σ expenses(x)

where an expense of x is value + gas_limit × gas_price of every tx x sends,
and an income is either a balance increase caused by someone else's tx
(DirectFromOther) or what comes back to x from its own tx (SelfResidual:
the refund, plus the value when the tx rolled back).
"""
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from anh_errors import InfeasibleTheta, InternalInvariantViolation, NotAnAccountingQuery, UnknownIncomeTx
from anh_executor import ClosureBuilder, ClosureRun, QueryResult, chain_end, execute_closure, observe
from anh_log import get_logger, progress_enabled
from anh_query import Query, QueryKind, evaluate_state_query, results_match
from anh_txindex import InvertedIndex, TxLocator
from anh_types import (
    BLACKHOLE,
    CODE_RUNNING_KINDS,
    AccountId,
    ChainPosition,
    Keyring,
    StateKey,
    Transaction,
    TxKind,
    make_tx,
)
from anh_vm import ExecutionReceipt, GasTable, OathClaim, ReceiptStatus, RollbackReason

logger = get_logger(__name__)

EXACT_LIMIT = 20
DEFAULT_EPSILON = 0.01
DP_WORK_LIMIT = 20_000_000
OATH_CODE = "HALT"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

class IncomeCase(Enum):
    DIRECT_FROM_OTHER = "DirectFromOther"
    SELF_RESIDUAL = "SelfResidual"


@dataclass(frozen=True)
class IncomeRecord:
    tx: TxLocator
    beneficiary: AccountId
    amount: int
    case: IncomeCase
    income_cost: Optional[int] = None

    @property
    def zero_cost(self) -> bool:
        return self.income_cost == 0

    def with_cost(self, cost: int) -> "IncomeRecord":
        return replace(self, income_cost=cost)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tx": self.tx.to_dict(),
            "beneficiary": str(self.beneficiary),
            "amount": self.amount,
            "case": self.case.value,
            "income_cost": self.income_cost,
            "zero_cost": self.zero_cost,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IncomeRecord":
        tx = data["tx"]
        return cls(
            tx=TxLocator(int(tx["height"]), int(tx["offset"]), tx["tx_id"]),
            beneficiary=AccountId.from_text(data["beneficiary"]),
            amount=int(data["amount"]),
            case=IncomeCase(data["case"]),
            income_cost=data.get("income_cost"),
        )


@dataclass(frozen=True)
class BalanceBound:
    x0: int
    p_theta: int
    q_expenses: int

    @property
    def bound(self) -> int:
        return self.x0 + self.p_theta - self.q_expenses

    def to_dict(self) -> Dict[str, int]:
        return {"x0": self.x0, "p_theta": self.p_theta, "q_expenses": self.q_expenses, "bound": self.bound}


class IncomeCatalog:
    """
    What each user already knows about its incomes. Entries are hints for
    choosing Θ; verification never trusts them.
    """

    def __init__(self):
        self._records: Dict[AccountId, Dict[str, IncomeRecord]] = {}

    def learn(self, record: IncomeRecord) -> None:
        self._records.setdefault(record.beneficiary, {})[record.tx.tx_id] = record

    def learn_all(self, records: Iterable[IncomeRecord]) -> None:
        for record in records:
            self.learn(record)

    def records(self, account: AccountId) -> List[IncomeRecord]:
        return sorted(self._records.get(account, {}).values(), key=lambda r: r.tx)

    def get(self, account: AccountId, tx_id: str) -> Optional[IncomeRecord]:
        return self._records.get(account, {}).get(tx_id)

    def __len__(self) -> int:
        return sum(len(r) for r in self._records.values())

    def to_dict(self) -> Dict[str, List[Dict[str, Any]]]:
        return {
            str(a): [r.to_dict() for r in self.records(a)]
            for a in sorted(self._records, key=lambda acct: acct.hex)
        }


@dataclass(frozen=True)
class OathContract:
    accountant: AccountId
    address: AccountId
    deposit: int
    claims: Tuple[OathClaim, ...] = ()

    def with_claim(self, claim: OathClaim) -> "OathContract":
        return replace(self, claims=self.claims + (claim,))


# ---------------------------------------------------------------------------
# Income classification and cost
# ---------------------------------------------------------------------------

def _income_from_change(
    x: AccountId, sender: AccountId, value: int, reservation: int, change: int, locator: TxLocator
) -> Optional[IncomeRecord]:
    if sender == x:
        amount = change + value + reservation
        case = IncomeCase.SELF_RESIDUAL
    else:
        amount = change
        case = IncomeCase.DIRECT_FROM_OTHER
    if amount < 0:
        if x.is_user:
            raise InternalInvariantViolation(f"NegativeIncome: {amount} for {x.short} at {locator.tx_id[:10]}")
        return None
    if amount == 0:
        return None
    return IncomeRecord(locator, x, amount, case)


def classify_income(receipt: ExecutionReceipt, x: AccountId, locator: Optional[TxLocator] = None) -> Optional[IncomeRecord]:
    """Income of x carried by one canonical receipt, or None"""
    old, new = receipt.balance_change(x)
    locator = locator or TxLocator(-1, -1, receipt.tx_id)
    return _income_from_change(x, receipt.sender, receipt.value, receipt.reservation, new - old, locator)


def static_change(tx: Transaction, x: AccountId, gas: GasTable) -> int:
    """Balance change of x from a transfer the zero-cost ledger confirms"""
    change = 0
    if tx.sender == x:
        change -= tx.value + gas.intrinsic_gas(TxKind.TRANSFER) * tx.gas_price
    if tx.recipient == x:
        change += tx.value
    return change


def _income_seed(builder: ClosureBuilder, locator: TxLocator, tx: Transaction, x: AccountId) -> None:
    if tx.sender == x or not x.is_user:
        builder.demand_tx(locator)
    else:
        builder.demand_tx(locator, skip=(StateKey.balance(x),))


def _income_of(run: ClosureRun, ledger, locator: TxLocator, x: AccountId) -> Optional[IncomeRecord]:
    tx = ledger.tx_at(locator.position)
    receipt = run.receipts.get(locator.tx_id)
    if receipt is not None:
        return classify_income(receipt, x, locator)
    change = static_change(tx, x, ledger.gas)
    return _income_from_change(x, tx.sender, tx.value, tx.reservation, change, locator)


def code_gas(run: ClosureRun, ledger) -> int:
    """Gas spent by closure members that run contract code"""
    total = 0
    for tx_id, receipt in run.receipts.items():
        if ledger.get_tx(tx_id).kind in CODE_RUNNING_KINDS:
            total += receipt.gas_used
    return total


def _locator_for(ledger, ref: Union[str, TxLocator, IncomeRecord]) -> TxLocator:
    if isinstance(ref, IncomeRecord):
        ref = ref.tx
    tx_id = ref.tx_id if isinstance(ref, TxLocator) else ref
    position = ledger.locate(tx_id)
    if position is None:
        raise UnknownIncomeTx(f"tx {tx_id[:16]} is not on the chain")
    return TxLocator(position.height, position.offset, tx_id)


def evaluate_income(ref, x: AccountId, ledger, index: InvertedIndex, zero_cost=None) -> Tuple[Optional[IncomeRecord], ClosureRun]:
    """Execute one income's closure; the record carries its verified amount and cost"""
    zc = zero_cost if zero_cost is not None else ledger.zero_cost
    locator = _locator_for(ledger, ref)
    builder = ClosureBuilder(ledger, index, zc)
    _income_seed(builder, locator, ledger.tx_at(locator.position), x)
    run = execute_closure(builder.build(), ledger)
    record = _income_of(run, ledger, locator, x)
    if record is not None:
        record = record.with_cost(code_gas(run, ledger))
    return record, run


def income_cost(rec: IncomeRecord, ledger, index: InvertedIndex, zero_cost=None) -> int:
    """
    Gas needed to confirm the exact amount of an income.

    Plain transfers and contract creation run no code and cost nothing;
    transfers confirmed by the zero-cost ledger are not expanded at all.
    """
    _, run = evaluate_income(rec.tx, rec.beneficiary, ledger, index, zero_cost)
    return code_gas(run, ledger)


def discover_incomes(
    x: AccountId,
    ledger,
    index: InvertedIndex,
    zero_cost=None,
    upto: Optional[ChainPosition] = None,
    with_costs: bool = True,
    catalog: Optional[IncomeCatalog] = None,
) -> List[IncomeRecord]:
    """
    Enumerate and verify every income of x before upto.

    Args:
        with_costs: Compute each record's own income cost (one closure per
                    candidate); otherwise amounts come from a single union
                    closure and costs stay None
        catalog: Learns the discovered records when given
    """
    zc = zero_cost if zero_cost is not None else ledger.zero_cost
    candidates = index.txs_touching(StateKey.balance(x), upto)
    records: List[IncomeRecord] = []
    if with_costs:
        for locator in tqdm(candidates, desc=f"incomes of {x.short}", unit="tx", disable=not progress_enabled()):
            record, _ = evaluate_income(locator, x, ledger, index, zc)
            if record is not None:
                records.append(record)
    else:
        builder = ClosureBuilder(ledger, index, zc)
        for locator in candidates:
            _income_seed(builder, locator, ledger.tx_at(locator.position), x)
        run = execute_closure(builder.build(), ledger)
        for locator in candidates:
            record = _income_of(run, ledger, locator, x)
            if record is not None:
                records.append(record)
    if catalog is not None:
        catalog.learn_all(records)
    return records


# ---------------------------------------------------------------------------
# Θ selection
# ---------------------------------------------------------------------------

def _theta_cost(records: Sequence[IncomeRecord]) -> int:
    return sum(r.income_cost for r in records)


def _exact_theta(records: List[IncomeRecord], gap: int) -> List[int]:
    """Min-cost cover by a Pareto dynamic program over capped amounts"""
    # (amount capped at gap, cost, chosen indices as locators, indices)
    frontier: List[Tuple[int, int, Tuple[TxLocator, ...], Tuple[int, ...]]] = [(0, 0, (), ())]
    for i, rec in enumerate(records):
        grown = [
            (min(gap, amount + rec.amount), cost + rec.income_cost, tuple(sorted(locs + (rec.tx,))), picks + (i,))
            for amount, cost, locs, picks in frontier
            if amount < gap
        ]
        merged = sorted(frontier + grown, key=lambda s: (-s[0], s[1], s[2]))
        frontier = []
        best = None
        for state in merged:
            key = (state[1], state[2])
            if best is None or key < best:
                frontier.append(state)
                best = key
    covering = [s for s in frontier if s[0] >= gap]
    return list(min(covering, key=lambda s: (s[1], s[2]))[3])


def _greedy_theta(records: List[IncomeRecord], gap: int) -> List[int]:
    """Ratio greedy with single-item completion of every prefix, then redundancy repair"""
    order = sorted(range(len(records)), key=lambda i: (records[i].income_cost / records[i].amount, records[i].tx))
    best: Optional[List[int]] = None
    best_cost = None
    prefix: List[int] = []
    total = 0
    for pos, i in enumerate(order):
        need = gap - total
        finisher = None
        for j in order[pos:]:
            if records[j].amount >= need and (finisher is None or (records[j].income_cost, records[j].tx) < (records[finisher].income_cost, records[finisher].tx)):
                finisher = j
        if finisher is not None:
            candidate = prefix + [finisher]
            cost = sum(records[k].income_cost for k in candidate)
            if best_cost is None or cost < best_cost:
                best, best_cost = candidate, cost
        prefix.append(i)
        total += records[i].amount
        if total >= gap:
            cost = sum(records[k].income_cost for k in prefix)
            if best_cost is None or cost < best_cost:
                best, best_cost = list(prefix), cost
            break
    chosen = best or []
    for k in sorted(chosen, key=lambda k: (-records[k].income_cost, records[k].tx)):
        rest = [m for m in chosen if m != k]
        if sum(records[m].amount for m in rest) >= gap:
            chosen = rest
    return chosen


def _lp_bound(records: List[IncomeRecord], gap: int) -> float:
    """Fractional relaxation: a lower bound on the optimum"""
    remaining = gap
    bound = 0.0
    for rec in sorted(records, key=lambda r: r.income_cost / r.amount):
        if remaining <= 0:
            break
        take = min(rec.amount, remaining)
        bound += rec.income_cost * take / rec.amount
        remaining -= take
    return bound


def _scaled_theta(records: List[IncomeRecord], gap: int, upper: int, eps: float) -> Optional[List[int]]:
    """
    Scaled-cost dynamic program: best[c] is the largest capped amount reachable
    with scaled cost c. Result cost is within eps of the optimum.
    """
    n = len(records)
    lower = max(_lp_bound(records, gap), upper / 2)
    if lower <= 0:
        return None
    scale = max(1.0, eps * lower / n)
    weights = [int(r.income_cost // scale) for r in records]
    size = int(upper // scale) + 1
    if n * size > DP_WORK_LIMIT or gap * n >= 2**62:
        logger.debug(f"Scaled DP skipped: table {n}x{size}")
        return None

    best = np.full(size, -1, dtype=np.int64)
    best[0] = 0
    took = np.zeros((n, size), dtype=bool)
    for i, rec in enumerate(records):
        w = weights[i]
        if w >= size:
            continue
        src = best[: size - w]
        cand = np.where(src >= 0, np.minimum(src + min(rec.amount, gap), gap), -1)
        better = cand > best[w:]
        updated = best.copy()
        updated[w:] = np.where(better, cand, best[w:])
        took[i, w:] = better
        best = updated

    reachable = np.nonzero(best >= gap)[0]
    if reachable.size == 0:
        return None
    c = int(reachable[0])
    picks: List[int] = []
    for i in range(n - 1, -1, -1):
        if took[i, c]:
            picks.append(i)
            c -= weights[i]
    return sorted(picks)


def select_theta(
    x: AccountId,
    required: int,
    catalog: IncomeCatalog,
    q_expenses: int,
    x0: int,
    eps: float = DEFAULT_EPSILON,
    exact_limit: int = EXACT_LIMIT,
) -> List[IncomeRecord]:
    """
    Choose incomes of x with X0 + Σ amount − Q ≥ required at minimal total
    income cost.

    Exact for catalogs up to exact_limit records; larger catalogs use the
    greedy answer improved by a scaled dynamic program, within (1 + eps) of
    the optimum whenever the table fits the work limit.

    Raises:
        InfeasibleTheta: even the whole catalog does not reach the bound
    """
    gap = required + q_expenses - x0
    if gap <= 0:
        return []
    records = [r for r in catalog.records(x) if r.amount > 0 and r.income_cost is not None]
    if sum(r.amount for r in records) < gap:
        raise InfeasibleTheta(f"catalog of {x.short} covers {sum(r.amount for r in records)}, needs {gap}")

    if len(records) <= exact_limit:
        picks = _exact_theta(records, gap)
    else:
        picks = _greedy_theta(records, gap)
        upper = _theta_cost([records[i] for i in picks])
        scaled = _scaled_theta(records, gap, upper, eps) if upper > 0 else None
        if scaled is not None:
            scaled_key = (_theta_cost([records[i] for i in scaled]), sorted(records[i].tx for i in scaled))
            greedy_key = (upper, sorted(records[i].tx for i in picks))
            if scaled_key < greedy_key:
                picks = scaled
    theta = sorted((records[i] for i in picks), key=lambda r: r.tx)
    logger.debug(f"Θ for {x.short}: {len(theta)} incomes, cost {_theta_cost(theta)}, gap {gap}")
    return theta


# ---------------------------------------------------------------------------
# Pay
# ---------------------------------------------------------------------------

@dataclass
class PayDecision:
    accepted: bool
    reason: Optional[str]
    bound: BalanceBound
    txs_executed: int = 0
    gas_executed: int = 0
    verified: List[IncomeRecord] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "decision": "Accept" if self.accepted else "Reject",
            "reason": self.reason,
            "txs_executed": self.txs_executed,
            "gas_executed": self.gas_executed,
        }
        out.update(self.bound.to_dict())
        return out


def _verify_theta(x: AccountId, locators: List[TxLocator], ledger, index: InvertedIndex, zc) -> Tuple[int, List[IncomeRecord], ClosureRun]:
    builder = ClosureBuilder(ledger, index, zc)
    for locator in locators:
        _income_seed(builder, locator, ledger.tx_at(locator.position), x)
    run = execute_closure(builder.build(), ledger)
    verified = []
    for locator in locators:
        record = _income_of(run, ledger, locator, x)
        if record is not None:
            verified.append(record)
    return sum(r.amount for r in verified), verified, run


def _theta_locators(ledger, theta: Iterable) -> List[TxLocator]:
    unique: Dict[str, TxLocator] = {}
    for ref in theta:
        locator = _locator_for(ledger, ref)
        unique[locator.tx_id] = locator
    return sorted(unique.values())


def pay_verify(
    tx: Union[Transaction, str],
    theta: Iterable,
    ledger,
    index: InvertedIndex,
    zero_cost=None,
    catalog: Optional[IncomeCatalog] = None,
) -> PayDecision:
    """
    Recipient-side check of a payment.

    Q is every expense the sender committed before tx plus tx's own fee
    reservation; X0 is the sender's genesis allocation; P_Θ is re-executed
    from the Θ closures. Accept iff X0 + P_Θ − Q ≥ tx.value.

    Raises:
        UnknownIncomeTx: tx or a Θ member is not on the chain
    """
    zc = zero_cost if zero_cost is not None else ledger.zero_cost
    tx_id = tx if isinstance(tx, str) else tx.tx_id
    position = ledger.locate(tx_id)
    if position is None:
        raise UnknownIncomeTx(f"payment tx {tx_id[:16]} is not on the chain")
    payment = ledger.tx_at(position)
    sender = payment.sender
    x0 = ledger.genesis_allocation(sender)
    q = index.total_expenses(sender, position) + payment.reservation
    locators = _theta_locators(ledger, theta)

    if payment.kind != TxKind.TRANSFER:
        return PayDecision(False, "NotATransfer", BalanceBound(x0, 0, q))
    if any(loc.position >= position for loc in locators):
        return PayDecision(False, "ThetaAfterPayment", BalanceBound(x0, 0, q))

    p_theta, verified, run = _verify_theta(sender, locators, ledger, index, zc)
    bound = BalanceBound(x0, p_theta, q)
    accepted = bound.bound >= payment.value
    decision = PayDecision(
        accepted,
        None if accepted else "InsufficientProof",
        bound,
        run.txs_executed,
        run.gas_executed,
        verified,
    )
    if accepted and catalog is not None and payment.recipient != sender and payment.value > 0:
        locator = TxLocator(position.height, position.offset, tx_id)
        catalog.learn(IncomeRecord(locator, payment.recipient, payment.value, IncomeCase.DIRECT_FROM_OTHER, run.gas_executed))
    logger.info(f"Pay {payment.short()}: {'Accept' if accepted else 'Reject'} (bound {bound.bound}, gas {run.gas_executed})")
    return decision


# ---------------------------------------------------------------------------
# Oath of correctness
# ---------------------------------------------------------------------------

class AuditVerdict(Enum):
    HONEST = "Honest"
    SLASHED = "Slashed"
    UNDERFUNDED_SLASH = "UnderfundedSlash"
    INVALID = "Invalid"


@dataclass(frozen=True)
class AuditResult:
    verdict: AuditVerdict
    claimed: Any = None
    actual: Any = None
    penalty: int = 0
    slashed: int = 0
    reason: Optional[str] = None
    txs_executed: int = 0
    gas_executed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        verdict = self.verdict.value
        if self.verdict == AuditVerdict.SLASHED:
            verdict = f"Slashed({self.slashed})"
        return {
            "verdict": verdict,
            "claimed": self.claimed,
            "actual": self.actual,
            "penalty": self.penalty,
            "reason": self.reason,
            "txs_executed": self.txs_executed,
            "gas_executed": self.gas_executed,
        }


def deploy_oath(keyring: Keyring, accountant: AccountId, nonce: int, deposit: int, gas: GasTable) -> Tuple[Transaction, OathContract]:
    """ContractCreate for an oath contract whose balance is the deposit"""
    address = AccountId.contract_address(accountant, nonce)
    tx = make_tx(
        keyring,
        accountant,
        nonce,
        TxKind.CONTRACT_CREATE,
        address,
        value=deposit,
        gas_limit=gas.intrinsic_gas(TxKind.CONTRACT_CREATE),
        payload=OATH_CODE,
    )
    return tx, OathContract(accountant, address, deposit)


def oath_claim(
    keyring: Keyring,
    accountant: AccountId,
    contract: AccountId,
    nonce: int,
    query: Query,
    result: Any,
    penalty: int,
    gas: GasTable,
) -> Transaction:
    """An OathCall carrying (query, claimed result, penalty) in its payload"""
    claim = OathClaim(query, result, penalty)
    gas_limit = gas.intrinsic_gas(TxKind.OATH_CALL) + gas.ops["QUERY"] * max(1, len(query.seed_keys()))
    return make_tx(
        keyring,
        accountant,
        nonce,
        TxKind.OATH_CALL,
        contract,
        gas_limit=gas_limit,
        payload=claim.to_payload(),
        writes=[StateKey.balance(BLACKHOLE)],
    )


def read_claim(tx: Transaction) -> OathClaim:
    """The claimed result straight from the tx description; executes nothing"""
    return OathClaim.from_payload(tx.payload)


def audit_oath(claim_tx: Union[Transaction, str], ledger, index: InvertedIndex) -> AuditResult:
    """Re-execute the claim's closure and report what its canonical execution did"""
    tx_id = claim_tx if isinstance(claim_tx, str) else claim_tx.tx_id
    position = ledger.locate(tx_id)
    if position is None:
        raise UnknownIncomeTx(f"claim tx {tx_id[:16]} is not on the chain")
    tx = ledger.tx_at(position)
    if tx.kind != TxKind.OATH_CALL:
        return AuditResult(AuditVerdict.INVALID, reason="NotAnOathCall")
    try:
        claim = read_claim(tx)
    except (ValueError, KeyError, TypeError, AttributeError):
        return AuditResult(AuditVerdict.INVALID, reason=RollbackReason.BAD_OATH_QUERY.value)

    builder = ClosureBuilder(ledger, index)
    builder.demand_tx(TxLocator(position.height, position.offset, tx_id))
    run = execute_closure(builder.build(), ledger)
    receipt = run.receipts[tx_id]
    common = dict(claimed=claim.result, penalty=claim.penalty, txs_executed=run.txs_executed, gas_executed=run.gas_executed)

    if receipt.status == ReceiptStatus.ROLLED_BACK:
        verdict = AuditVerdict.UNDERFUNDED_SLASH if receipt.reason == RollbackReason.UNDERFUNDED_SLASH else AuditVerdict.INVALID
        actual = _claim_truth(run, claim, position) if claim.query.is_state_query else None
        return AuditResult(verdict, actual=actual, reason=receipt.reason.value, **common)

    actual = _claim_truth(run, claim, position)
    delta = receipt.delta_of(StateKey.balance(BLACKHOLE))
    slashed = delta[1] - delta[0] if delta else 0
    if results_match(claim.result, actual):
        return AuditResult(AuditVerdict.HONEST, actual=actual, **common)
    return AuditResult(AuditVerdict.SLASHED, actual=actual, slashed=slashed, **common)


def _claim_truth(run: ClosureRun, claim: OathClaim, position: ChainPosition) -> Any:
    at = position if claim.query.at is None else min(claim.query.at, position)
    return evaluate_state_query(claim.query, lambda key: run.state.value_at(key, at))


# ---------------------------------------------------------------------------
# Minimal accounting queries
# ---------------------------------------------------------------------------

def maq_answer(
    query: Query,
    ledger,
    index: InvertedIndex,
    theta: Optional[Iterable] = None,
    zero_cost=None,
    budget: Optional[int] = None,
) -> QueryResult:
    """
    One bit about the chain, answered as cheaply as possible: zero-cost
    ledger first, then the lower bound from Θ, then closure execution.
    """
    if query.kind not in (QueryKind.TRANSFER_SUCCEEDED, QueryKind.BALANCE_AT_LEAST):
        raise NotAnAccountingQuery(f"{query.kind.value} is not a minimal accounting query")
    zc = zero_cost if zero_cost is not None else ledger.zero_cost
    spent_txs = 0
    spent_gas = 0

    if query.kind == QueryKind.TRANSFER_SUCCEEDED:
        position = ledger.locate(query.tx_id)
        if position is None:
            return QueryResult(False, path="unknown_tx")
        if zc.is_confirmed(query.tx_id):
            return QueryResult(True, path="zero_cost")
        tx = ledger.tx_at(position)
        if theta is not None and tx.kind == TxKind.TRANSFER:
            decision = pay_verify(tx, theta, ledger, index, zc)
            if decision.accepted:
                return QueryResult(True, decision.txs_executed, decision.gas_executed, "lower_bound")
            spent_txs, spent_gas = decision.txs_executed, decision.gas_executed
    else:
        at = chain_end(ledger) if query.at is None else min(query.at, chain_end(ledger))
        if zc.balance_at(query.account, at) >= query.amount:
            return QueryResult(True, path="zero_cost")
        if theta is not None and query.account.is_user:
            locators = _theta_locators(ledger, theta)
            if all(loc.position < at for loc in locators):
                p_theta, _, run = _verify_theta(query.account, locators, ledger, index, zc)
                bound = BalanceBound(ledger.genesis_allocation(query.account), p_theta, index.total_expenses(query.account, at))
                if bound.bound >= query.amount:
                    return QueryResult(True, run.txs_executed, run.gas_executed, "lower_bound")
                spent_txs, spent_gas = run.txs_executed, run.gas_executed

    result = observe(query, ledger, index, budget=budget, zero_cost=zc)
    return QueryResult(result.result, result.txs_executed + spent_txs, result.gas_executed + spent_gas, result.path)


def theta_file(path: str) -> List[str]:
    """Θ files are JSON lists of tx ids"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list) or not all(isinstance(t, str) for t in data):
        raise ValueError(f"{path}: Θ file must be a JSON list of tx ids")
    return data
