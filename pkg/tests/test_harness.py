"""Random chains against the eager oracle."""
from itertools import combinations

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from anh_accounting import discover_incomes, pay_verify
from anh_executor import EagerReplay
from anh_harness import checked_keys, oracle_diff, random_chain, reconcile, sweep
from anh_types import ChainPosition, KeyKind, TxKind

SMALL = {"n_accounts": 6, "n_contracts": 2, "n_txs": 40, "block_size": 8}


def test_random_chain_is_deterministic():
    a = random_chain(5, **SMALL)
    b = random_chain(5, **SMALL)
    assert a.ledger.tip_hash == b.ledger.tip_hash
    assert a.rejected == b.rejected
    assert a.ledger.height == 5


def test_different_seeds_give_different_chains():
    assert random_chain(1, **SMALL).ledger.tip_hash != random_chain(2, **SMALL).ledger.tip_hash


def test_checked_keys_cover_balances_and_storage():
    chain = random_chain(3, **SMALL)
    keys = checked_keys(chain.ledger, chain.index)
    assert {k.kind for k in keys} <= {KeyKind.BALANCE, KeyKind.STORAGE}
    assert all(any(k.account == u and k.kind == KeyKind.BALANCE for k in keys) for u in chain.ledger.allocations)


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(min_value=0, max_value=2**32))
def test_lazy_answers_match_full_replay(seed):
    chain = random_chain(seed, **SMALL)
    result = oracle_diff(chain.ledger, chain.index)
    assert result["checked"] > 0
    assert result["diffs"] == []
    assert result["zero_cost_violations"] == []


@settings(max_examples=5, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(min_value=0, max_value=2**32))
def test_balances_reconcile_with_incomes_and_expenses(seed):
    chain = random_chain(seed, **SMALL)
    for user in chain.users:
        derived, replayed = reconcile(chain.ledger, chain.index, user)
        assert derived == replayed


def test_reconcile_at_an_earlier_block():
    chain = random_chain(9, **SMALL)
    at = ChainPosition.after_block(2)
    for user in chain.users:
        derived, replayed = reconcile(chain.ledger, chain.index, user, upto=at)
        assert derived == replayed


def test_oracle_at_the_tip_only():
    chain = random_chain(4, **SMALL)
    every = oracle_diff(chain.ledger, chain.index)
    tip = oracle_diff(chain.ledger, chain.index, every_block=False)
    assert tip["diffs"] == []
    assert tip["checked"] * chain.ledger.height == every["checked"]


def test_sweep_totals():
    result = sweep([0, 1, 2], **SMALL)
    assert result["chains"] == 3
    assert result["checked"] > 0
    assert result["diffs"] == 0
    assert result["zero_cost_violations"] == 0


@pytest.mark.slow
def test_sweep_at_default_size():
    result = sweep(range(10))
    assert result["diffs"] == 0
    assert result["zero_cost_violations"] == 0


@settings(max_examples=4, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(min_value=0, max_value=2**32))
def test_every_income_subset_gives_a_sound_lower_bound(seed):
    chain = random_chain(seed, n_accounts=5, n_contracts=2, n_txs=30, block_size=6)
    ledger, index = chain.ledger, chain.index
    at = ChainPosition.after_block(ledger.height)
    replayed = EagerReplay(ledger).advance(at).state
    for user in chain.users:
        incomes = discover_incomes(user, ledger, index, upto=at, with_costs=False)
        if len(incomes) > 10:
            continue
        base = ledger.genesis_allocation(user) - index.total_expenses(user, at)
        balance = replayed.balance(user)
        for size in range(len(incomes) + 1):
            for subset in combinations(incomes, size):
                assert base + sum(r.amount for r in subset) <= balance
        assert base + sum(r.amount for r in incomes) == balance


@settings(max_examples=6, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(min_value=0, max_value=2**32), rng=st.randoms(use_true_random=False))
def test_accepted_payments_are_covered_by_the_replayed_balance(seed, rng):
    chain = random_chain(seed, **SMALL)
    ledger, index = chain.ledger, chain.index
    users = set(chain.users)
    replay = EagerReplay(ledger)
    for position, tx in list(ledger.iter_txs()):
        if tx.kind != TxKind.TRANSFER or tx.sender not in users:
            continue
        incomes = discover_incomes(tx.sender, ledger, index, upto=position, with_costs=False)
        theta = [r for r in incomes if rng.random() < 0.5]
        decision = pay_verify(tx, theta, ledger, index)
        if decision.accepted:
            balance = replay.advance(position).state.balance(tx.sender)
            assert balance >= tx.value
