"""Lazy closure execution against the eager replay."""
import json

import pytest
from conftest import transfer

from anh_accounting import deploy_oath
from anh_errors import ClosureError, ClosureExceedsBudget
from anh_executor import (
    ClosureBuilder,
    EagerReplay,
    WorldState,
    chain_end,
    dependency_closure,
    eager_execute,
    execute_closure,
    observe,
)
from anh_query import Query
from anh_txindex import TxLocator, build_index
from anh_types import BLACKHOLE, AccountId, ChainPosition, StateKey, TxKind, make_tx
from anh_vm import RollbackReason


def test_closure_skips_unrelated_history(ledger, keyring, gas, accounts):
    alice, bob, carol, dave = (accounts[n] for n in ("alice", "bob", "carol", "dave"))
    a = transfer(keyring, gas, alice, 0, bob, 100)
    c = transfer(keyring, gas, carol, 0, dave, 100)
    ledger.seal_block([a, c])
    index = build_index(ledger.blocks)
    closure = dependency_closure(StateKey.balance(bob), chain_end(ledger), index, ledger)
    assert closure.tx_ids == [a.tx_id]
    run = execute_closure(closure, ledger)
    assert run.state.balance(bob) == 100
    assert run.txs_executed == 1
    assert run.gas_executed == 1000


def test_closure_follows_sender_history(ledger, keyring, gas, accounts):
    alice, bob, carol = accounts["alice"], accounts["bob"], accounts["carol"]
    first = transfer(keyring, gas, carol, 0, alice, 4000)
    ledger.seal_block([first])
    second = transfer(keyring, gas, alice, 0, bob, 6000)
    ledger.seal_block([second])
    index = build_index(ledger.blocks)
    closure = dependency_closure(StateKey.balance(bob), chain_end(ledger), index, ledger)
    assert closure.tx_ids == [first.tx_id, second.tx_id]
    assert observe(Query.exact_balance(bob), ledger, index).result == 6000


def test_zero_cost_confirmed_transfers_are_static(ledger, keyring, gas, accounts):
    alice, bob, carol = accounts["alice"], accounts["bob"], accounts["carol"]
    older = transfer(keyring, gas, carol, 0, alice, 10)
    ledger.seal_block([older])
    pay = transfer(keyring, gas, carol, 1, bob, 500)
    ledger.seal_block([pay])
    index = build_index(ledger.blocks)
    closure = dependency_closure(StateKey.balance(bob), chain_end(ledger), index, ledger, ledger.zero_cost)
    assert closure.tx_ids == [pay.tx_id]
    assert pay.tx_id in closure.static
    run = execute_closure(closure, ledger)
    assert run.txs_executed == 0
    assert run.state.balance(bob) == 500


def test_observe_matches_replay_on_double_spend(run_of):
    run = run_of("double_spend")
    state, receipts = eager_execute(run.ledger)
    for name in ("alice", "bob", "carol"):
        account = run.scenario.accounts[name]
        lazy = observe(Query.exact_balance(account), run.ledger, run.index)
        assert lazy.result == state.balance(account)
    assert observe(Query.transfer_succeeded(run.labels["spend_bob"]), run.ledger, run.index).result is True
    assert observe(Query.transfer_succeeded(run.labels["spend_carol"]), run.ledger, run.index).result is False
    assert [r.applied for r in receipts] == [True, False]


def test_balance_at_least_uses_zero_cost_first(run_of):
    run = run_of("direct_income")
    alice = run.scenario.accounts["alice"]
    result = observe(Query.balance_at_least(alice, 1), run.ledger, run.index)
    assert result.result is True
    assert result.path == "zero_cost"
    assert result.gas_executed == 0


def test_historical_position(run_of):
    run = run_of("contract_income")
    alice = run.scenario.accounts["alice"]
    before = run.ledger.locate(run.labels["tx_ya"])
    assert observe(Query.exact_balance(alice, before), run.ledger, run.index).result == 1000
    assert observe(Query.exact_balance(alice), run.ledger, run.index).result == 1000 + 2000 - 1500 - 1000


def test_storage_value_query(run_of):
    run = run_of("contract_income")
    y = run.scenario.accounts["y"]
    assert observe(Query.exact_balance(y), run.ledger, run.index).result == 3000
    assert observe(Query.storage_value(y, "unused"), run.ledger, run.index).result == 0


def test_budget_is_enforced(run_of):
    run = run_of("targeted_flood")
    victim = run.scenario.accounts["victim"]
    with pytest.raises(ClosureExceedsBudget):
        observe(Query.exact_balance(victim), run.ledger, run.index, budget=5000)


def test_unknown_transfer_is_reported(run_of):
    run = run_of("direct_income")
    result = observe(Query.transfer_succeeded("ab" * 32), run.ledger, run.index)
    assert result.result is False
    assert result.path == "unknown_tx"


def test_partial_state_refuses_reads_outside_its_domain(ledger, accounts):
    state = WorldState.partial(ledger, [StateKey.balance(accounts["alice"])])
    assert state.balance(accounts["alice"]) == 3000
    with pytest.raises(ClosureError):
        state.balance(accounts["bob"])


def test_value_at_reads_history():
    key = StateKey.balance(AccountId.from_name("x"))
    state = WorldState({key: 5})
    state.commit({key: 7}, ChainPosition(1, 0))
    state.commit({key: 9}, ChainPosition(2, 3))
    assert state.value_at(key, ChainPosition(1, 0)) == 5
    assert state.value_at(key, ChainPosition(2, 0)) == 7
    assert state.value_at(key, ChainPosition(3, 0)) == 9


def test_demand_tx_with_skip_leaves_recipient_history_out(run_of):
    run = run_of("forwarded_income")
    position = run.ledger.locate(run.labels["tx_da"])
    alice = run.scenario.accounts["alice"]
    builder = ClosureBuilder(run.ledger, run.index, run.ledger.zero_cost)
    builder.demand_tx(TxLocator(position.height, position.offset, run.labels["tx_da"]), skip=[StateKey.balance(alice)])
    closure = builder.build()
    assert run.labels["tx_yd"] in closure.tx_ids
    assert StateKey.balance(alice) not in closure.need


def test_eager_replay_advances_incrementally(run_of):
    run = run_of("forwarded_income")
    replay = EagerReplay(run.ledger)
    replay.advance(ChainPosition.after_block(2))
    dave = run.scenario.accounts["dave"]
    assert replay.state.balance(dave) == 3000
    replay.advance()
    full, _ = eager_execute(run.ledger)
    assert replay.state.snapshot() == full.snapshot()


def test_malformed_oath_claim_does_not_break_replay(ledger, keyring, gas, accounts):
    alice, carol = accounts["alice"], accounts["carol"]
    deploy, oath = deploy_oath(keyring, carol, 0, 500, gas)
    ledger.seal_block([deploy])
    payload = json.dumps({"query": {"StorageValue": {"account": str(alice), "slot": "x"}}, "result": 0, "penalty": 10})
    claim = make_tx(
        keyring, carol, 1, TxKind.OATH_CALL, oath.address,
        gas_limit=2100, payload=payload, writes=[StateKey.balance(BLACKHOLE)],
    )
    ledger.seal_block([claim])
    index = build_index(ledger.blocks)

    state, receipts = eager_execute(ledger)
    assert receipts[-1].reason == RollbackReason.BAD_OATH_QUERY
    lazy = observe(Query.exact_balance(carol), ledger, index)
    assert lazy.result == state.balance(carol) == 10_000 - 2000 - 500 - 2000
    assert observe(Query.exact_balance(alice), ledger, index).result == 3000
