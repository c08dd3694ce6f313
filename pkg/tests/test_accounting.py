"""Income cost, Θ selection, payment verification, oath audits and MAQs."""
import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anh_accounting import (
    DEFAULT_EPSILON,
    AuditVerdict,
    IncomeCase,
    IncomeCatalog,
    IncomeRecord,
    audit_oath,
    classify_income,
    discover_incomes,
    evaluate_income,
    income_cost,
    maq_answer,
    oath_claim,
    pay_verify,
    read_claim,
    select_theta,
)
from anh_errors import InfeasibleTheta, NotAnAccountingQuery, UnknownIncomeTx
from anh_executor import eager_execute
from anh_query import Query
from anh_scenario import observe_receipt
from anh_txindex import TxLocator, build_index
from anh_types import AccountId

X = AccountId.from_name("payer")


# ---------------------------------------------------------------------------
# Income cost on the three reference chains
# ---------------------------------------------------------------------------

def test_direct_transfer_income_is_free(run_of):
    run = run_of("direct_income")
    alice = run.scenario.accounts["alice"]
    record, _ = evaluate_income(run.labels["tx_ca"], alice, run.ledger, run.index)
    assert record.amount == 2000
    assert record.case == IncomeCase.DIRECT_FROM_OTHER
    assert record.income_cost == 0
    assert record.zero_cost


def test_contract_income_costs_its_call(run_of):
    run = run_of("contract_income")
    alice = run.scenario.accounts["alice"]
    record, _ = evaluate_income(run.labels["tx_ya"], alice, run.ledger, run.index)
    assert record.amount == 2000
    assert record.income_cost == 2000 + 1 + 100 + 1
    assert income_cost(record, run.ledger, run.index) == record.income_cost


def test_forwarded_income_costs_the_upstream_call(run_of):
    run = run_of("forwarded_income")
    alice = run.scenario.accounts["alice"]
    record, _ = evaluate_income(run.labels["tx_da"], alice, run.ledger, run.index)
    upstream = observe_receipt(run, run.labels["tx_yd"])
    assert record.amount == 2000
    assert record.case == IncomeCase.DIRECT_FROM_OTHER
    assert record.income_cost == upstream["gas_used"]
    assert record.income_cost > 0


def test_self_residual_income(run_of):
    run = run_of("contract_income")
    carol = run.scenario.accounts["carol"]
    records = discover_incomes(carol, run.ledger, run.index)
    assert [(r.tx.tx_id, r.case, r.amount) for r in records] == [
        (run.labels["tx_ya"], IncomeCase.SELF_RESIDUAL, 12_000 - 2102),
    ]


def test_discovery_with_and_without_costs_agree_on_amounts(run_of):
    run = run_of("forwarded_income")
    for name in ("alice", "dave", "carol"):
        account = run.scenario.accounts[name]
        costed = discover_incomes(account, run.ledger, run.index)
        union = discover_incomes(account, run.ledger, run.index, with_costs=False)
        assert [(r.tx, r.amount) for r in costed] == [(r.tx, r.amount) for r in union]
        assert all(r.income_cost is None for r in union)


def test_unknown_income_tx(run_of):
    run = run_of("direct_income")
    with pytest.raises(UnknownIncomeTx):
        evaluate_income("00" * 32, run.scenario.accounts["alice"], run.ledger, run.index)


def test_catalog_learns_and_serialises(run_of):
    run = run_of("forwarded_income")
    alice = run.scenario.accounts["alice"]
    catalog = IncomeCatalog()
    discover_incomes(alice, run.ledger, run.index, catalog=catalog)
    assert len(catalog) == 1
    record = catalog.get(alice, run.labels["tx_da"])
    assert IncomeRecord.from_dict(record.to_dict()) == record
    assert list(catalog.to_dict()) == [str(alice)]


# ---------------------------------------------------------------------------
# Θ selection
# ---------------------------------------------------------------------------

def _catalog(items):
    catalog = IncomeCatalog()
    for i, (amount, cost) in enumerate(items):
        locator = TxLocator(1, i, f"{i:064x}")
        catalog.learn(IncomeRecord(locator, X, amount, IncomeCase.DIRECT_FROM_OTHER, cost))
    return catalog


def _brute_force(items, gap):
    best = None
    for r in range(len(items) + 1):
        for combo in itertools.combinations(range(len(items)), r):
            if sum(items[i][0] for i in combo) >= gap:
                cost = sum(items[i][1] for i in combo)
                best = cost if best is None else min(best, cost)
    return best


def test_theta_empty_when_genesis_covers():
    assert select_theta(X, 100, _catalog([(50, 3)]), q_expenses=1000, x0=2000) == []


def test_theta_prefers_zero_cost_incomes():
    catalog = _catalog([(500, 0), (400, 2102), (300, 0)])
    theta = select_theta(X, 700, catalog, q_expenses=0, x0=0)
    assert sum(r.amount for r in theta) >= 700
    assert sum(r.income_cost for r in theta) == 0


def test_theta_infeasible():
    with pytest.raises(InfeasibleTheta):
        select_theta(X, 10_000, _catalog([(10, 1), (20, 2)]), q_expenses=0, x0=0)


@settings(max_examples=60, deadline=None)
@given(
    items=st.lists(st.tuples(st.integers(1, 400), st.integers(0, 60)), min_size=1, max_size=9),
    need=st.integers(1, 2000),
)
def test_exact_theta_matches_brute_force(items, need):
    gap = min(need, sum(a for a, _ in items))
    theta = select_theta(X, gap, _catalog(items), q_expenses=0, x0=0)
    assert sum(r.amount for r in theta) >= gap
    assert sum(r.income_cost for r in theta) == _brute_force(items, gap)


@settings(max_examples=40, deadline=None)
@given(
    items=st.lists(st.tuples(st.integers(1, 400), st.integers(0, 60)), min_size=1, max_size=10),
    need=st.integers(1, 2000),
)
def test_approximate_theta_is_within_epsilon(items, need):
    gap = min(need, sum(a for a, _ in items))
    eps = 0.1
    theta = select_theta(X, gap, _catalog(items), q_expenses=0, x0=0, eps=eps, exact_limit=0)
    cost = sum(r.income_cost for r in theta)
    assert sum(r.amount for r in theta) >= gap
    assert cost <= (1 + eps) * _brute_force(items, gap) + 1e-9


def _min_cover_cost(items, gap):
    best = [0] + [None] * gap
    for amount, cost in items:
        for reached in range(gap, -1, -1):
            if best[reached] is None:
                continue
            to = min(gap, reached + amount)
            if best[to] is None or best[reached] + cost < best[to]:
                best[to] = best[reached] + cost
    return best[gap]


@settings(max_examples=100, deadline=None)
@given(
    items=st.lists(st.tuples(st.integers(1, 400), st.integers(0, 3000)), min_size=21, max_size=40),
    need=st.integers(1, 6000),
)
def test_large_catalogs_stay_within_default_epsilon(items, need):
    gap = min(need, sum(a for a, _ in items))
    theta = select_theta(X, gap, _catalog(items), q_expenses=0, x0=0)
    cost = sum(r.income_cost for r in theta)
    assert sum(r.amount for r in theta) >= gap
    assert cost <= (1 + DEFAULT_EPSILON) * _min_cover_cost(items, gap) + 1e-9


def test_theta_is_deterministic():
    items = [(100, 5)] * 6 + [(300, 14)] * 3
    first = select_theta(X, 500, _catalog(items), q_expenses=0, x0=0)
    second = select_theta(X, 500, _catalog(items), q_expenses=0, x0=0)
    assert [r.tx for r in first] == [r.tx for r in second]


# ---------------------------------------------------------------------------
# Pay
# ---------------------------------------------------------------------------

def test_pay_with_zero_cost_income(run_of):
    run = run_of("direct_income")
    decision = pay_verify(run.labels["tx_ab"], [run.labels["tx_ca"]], run.ledger, run.index)
    assert decision.accepted
    assert decision.gas_executed == 0
    assert decision.bound.bound == 0 + 2000 - 1000


def test_pay_needs_theta_for_contract_income(run_of):
    run = run_of("contract_income")
    tx_ab = run.labels["tx_ab"]
    rejected = pay_verify(tx_ab, [], run.ledger, run.index)
    assert not rejected.accepted
    assert rejected.reason == "InsufficientProof"
    assert rejected.to_dict()["decision"] == "Reject"

    accepted = pay_verify(tx_ab, [run.labels["tx_ya"]], run.ledger, run.index)
    assert accepted.accepted
    assert accepted.bound.to_dict() == {"x0": 1000, "p_theta": 2000, "q_expenses": 1000, "bound": 2000}
    assert accepted.gas_executed >= 2102


def test_pay_rejections(run_of):
    run = run_of("contract_income")
    tx_ab = run.labels["tx_ab"]
    assert pay_verify(tx_ab, [tx_ab], run.ledger, run.index).reason == "ThetaAfterPayment"
    assert pay_verify(run.labels["tx_ya"], [], run.ledger, run.index).reason == "NotATransfer"
    with pytest.raises(UnknownIncomeTx):
        pay_verify("11" * 32, [], run.ledger, run.index)


def test_pay_ignores_theta_members_that_are_not_income(run_of):
    run = run_of("contract_income")
    decision = pay_verify(run.labels["tx_ab"], [run.labels["deploy_y"]], run.ledger, run.index)
    assert not decision.accepted
    assert decision.bound.p_theta == 0


def test_accepted_payment_teaches_the_recipient(run_of):
    run = run_of("forwarded_income")
    catalog = IncomeCatalog()
    pay_verify(run.labels["tx_ab"], [run.labels["tx_da"]], run.ledger, run.index, catalog=catalog)
    bob = run.scenario.accounts["bob"]
    learned = catalog.records(bob)
    assert [(r.tx.tx_id, r.amount) for r in learned] == [(run.labels["tx_ab"], 1500)]


# ---------------------------------------------------------------------------
# MAQ
# ---------------------------------------------------------------------------

def test_maq_paths(run_of):
    run = run_of("contract_income")
    alice = run.scenario.accounts["alice"]
    before = run.ledger.locate(run.labels["tx_ab"])
    query = Query.balance_at_least(alice, 2500, before)

    via_theta = maq_answer(query, run.ledger, run.index, theta=[run.labels["tx_ya"]])
    assert via_theta.result is True
    assert via_theta.path == "lower_bound"

    via_execution = maq_answer(query, run.ledger, run.index)
    assert via_execution.result is True
    assert via_execution.path == "execution"

    cheap = maq_answer(Query.balance_at_least(alice, 1000, before), run.ledger, run.index)
    assert cheap.path == "zero_cost"
    assert cheap.gas_executed == 0


def test_maq_transfer_succeeded(run_of):
    run = run_of("double_spend")
    assert maq_answer(Query.transfer_succeeded(run.labels["spend_bob"]), run.ledger, run.index).path == "zero_cost"
    failed = maq_answer(Query.transfer_succeeded(run.labels["spend_carol"]), run.ledger, run.index)
    assert failed.result is False
    assert failed.path == "execution"


def test_maq_rejects_exact_queries(run_of):
    run = run_of("direct_income")
    with pytest.raises(NotAnAccountingQuery):
        maq_answer(Query.exact_balance(run.scenario.accounts["alice"]), run.ledger, run.index)


# ---------------------------------------------------------------------------
# Oath
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "label,verdict,rendered",
    [
        ("claim_exact", AuditVerdict.HONEST, "Honest"),
        ("claim_wrong", AuditVerdict.SLASHED, "Slashed(1000)"),
        ("claim_threshold", AuditVerdict.HONEST, "Honest"),
        ("claim_false", AuditVerdict.UNDERFUNDED_SLASH, "UnderfundedSlash"),
    ],
)
def test_oath_audits(run_of, label, verdict, rendered):
    run = run_of("oath")
    result = audit_oath(run.labels[label], run.ledger, run.index)
    assert result.verdict == verdict
    assert result.to_dict()["verdict"] == rendered


def test_oath_actual_values(run_of):
    run = run_of("oath")
    wrong = audit_oath(run.labels["claim_wrong"], run.ledger, run.index)
    assert (wrong.claimed, wrong.actual, wrong.slashed) == (5001, 5000, 1000)


def test_read_claim_executes_nothing(run_of):
    run = run_of("oath")
    claim = read_claim(run.ledger.get_tx(run.labels["claim_wrong"]))
    assert claim.result == 5001
    assert claim.penalty == 1000


def test_only_the_accountant_may_claim(run_of):
    run = run_of("oath")
    alice = run.scenario.accounts["alice"]
    oath = run.scenario.accounts["oath"]
    tx = oath_claim(run.keyring, alice, oath, 0, Query.exact_balance(alice), 1, 10, run.gas)
    run.ledger.seal_block([tx])
    index = build_index(run.ledger.blocks)
    result = audit_oath(tx.tx_id, run.ledger, index)
    assert result.verdict == AuditVerdict.INVALID
    assert result.reason == "NotOathOwner"


def test_audit_of_a_plain_transfer_is_invalid(run_of):
    run = run_of("direct_income")
    result = audit_oath(run.labels["tx_ab"], run.ledger, run.index)
    assert result.verdict == AuditVerdict.INVALID


def test_classify_income_from_receipts(run_of):
    run = run_of("contract_income")
    _, receipts = eager_execute(run.ledger)
    by_id = {r.tx_id: r for r in receipts}
    names = run.scenario.accounts
    call = by_id[run.labels["tx_ya"]]

    alice = classify_income(call, names["alice"])
    assert (alice.amount, alice.case) == (2000, IncomeCase.DIRECT_FROM_OTHER)
    carol = classify_income(call, names["carol"])
    assert (carol.amount, carol.case) == (12_000 - 2102, IncomeCase.SELF_RESIDUAL)
    assert classify_income(call, names["bob"]) is None
    assert classify_income(by_id[run.labels["tx_ab"]], names["alice"]) is None
