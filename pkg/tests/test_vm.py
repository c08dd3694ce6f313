"""Assembler, gas schedule and single-transaction application."""
import json

import pytest

from anh_config import DEFAULT_GAS_TABLE
from anh_errors import AssemblyError, GasTableError
from anh_executor import WorldState
from anh_query import Query
from anh_types import BLACKHOLE, AccountId, AccountKind, Keyring, StateKey, TxKind, make_tx
from anh_vm import (
    ContractRecord,
    GasTable,
    ReceiptStatus,
    RollbackReason,
    apply_tx,
    assemble,
    burn_digest,
    derive_account,
    encode_call_args,
    format_program,
    parse_call_args,
    reset_vm_steps,
    run_contract,
    storage_footprint,
    vm_steps,
    word_account,
)

ALICE = AccountId.from_name("alice")
BOB = AccountId.from_name("bob")
CAROL = AccountId.from_name("carol")
KEYS = Keyring(5)


def _deployed(code: str, balance: int = 0, creator: AccountId = CAROL):
    contract = AccountId.contract_address(creator, 0)
    state = WorldState({StateKey.balance(ALICE): 50_000, StateKey.balance(contract): balance})
    state.commit({StateKey.code(contract): ContractRecord(assemble(code, {"bob": BOB}.__getitem__), creator)})
    return state, contract


def _call(contract, gas_limit, writes=(), payload="", value=0, nonce=0):
    return make_tx(KEYS, ALICE, nonce, TxKind.CONTRACT_CALL, contract, value=value, gas_limit=gas_limit, payload=payload, writes=writes)


def test_assemble_parses_operands_and_comments():
    program = assemble("PUSH 0x10  # sixteen\nSTORE total; HALT\nTRANSFER @bob", {"bob": BOB}.__getitem__)
    assert [ins.op for ins in program] == ["PUSH", "STORE", "HALT", "TRANSFER"]
    assert program[0].arg == 16
    assert program[3].arg == BOB
    assert assemble(format_program(program)) == program


@pytest.mark.parametrize(
    "text",
    ["FLY 3", "PUSH", "PUSH x", "HALT 1", "JUMPIF 9\nHALT", "TRANSFER @nobody", "TRANSFER a b"],
)
def test_assemble_rejects_bad_programs(text):
    with pytest.raises(AssemblyError):
        assemble(text, {}.__getitem__)


def test_storage_footprint_covers_slots_and_fixed_payees():
    contract = AccountId.contract_address(CAROL, 0)
    program = assemble("LOAD a\nSTORE b\nPUSH 1\nTRANSFER @bob\nHALT", {"bob": BOB}.__getitem__)
    assert storage_footprint(program, contract) == {
        StateKey.storage(contract, "a"),
        StateKey.storage(contract, "b"),
        StateKey.balance(BOB),
    }


def test_gas_table_validation():
    broken = json.loads(json.dumps(DEFAULT_GAS_TABLE))
    del broken["ops"]["BURN"]
    with pytest.raises(GasTableError):
        GasTable.from_dict(broken)
    broken = json.loads(json.dumps(DEFAULT_GAS_TABLE))
    broken["intrinsic"]["call"] = 0
    with pytest.raises(GasTableError):
        GasTable.from_dict(broken)


def test_gas_table_override_and_digest(tmp_path):
    base = GasTable.load()
    cheap = GasTable.load(None, {"intrinsic": {"transfer": 21}})
    assert base.intrinsic_gas(TxKind.TRANSFER) == 1000
    assert cheap.intrinsic_gas(TxKind.TRANSFER) == 21
    assert base.digest() != cheap.digest()
    path = tmp_path / "gas.json"
    path.write_text(json.dumps({"ops": {"STORE": 99}}))
    assert GasTable.load(str(path)).ops["STORE"] == 99
    with pytest.raises(GasTableError):
        GasTable.load(str(tmp_path / "missing.json"))
    with pytest.raises(GasTableError):
        GasTable.load(None, {"fees": {}})


def test_transfer_charges_intrinsic_gas(gas):
    state = WorldState({StateKey.balance(ALICE): 5000})
    tx = make_tx(KEYS, ALICE, 0, TxKind.TRANSFER, BOB, value=700, gas_limit=1500)
    _, receipt = apply_tx(state, tx, gas)
    assert receipt.applied
    assert receipt.gas_used == 1000
    assert receipt.refund == 500
    assert state.balance(ALICE) == 5000 - 700 - 1000
    assert state.balance(BOB) == 700
    assert state.get(StateKey.nonce(ALICE)) == 1


def test_insufficient_value_rolls_back_but_charges_fee(gas):
    state = WorldState({StateKey.balance(ALICE): 1500})
    tx = make_tx(KEYS, ALICE, 0, TxKind.TRANSFER, BOB, value=1000, gas_limit=1000)
    _, receipt = apply_tx(state, tx, gas)
    assert receipt.status == ReceiptStatus.ROLLED_BACK
    assert receipt.reason == RollbackReason.INSUFFICIENT_BALANCE
    assert state.balance(ALICE) == 500
    assert state.balance(BOB) == 0
    assert state.get(StateKey.nonce(ALICE)) == 1


def test_contract_payout_gas(gas):
    state, contract = _deployed("PUSH 2000\nTRANSFER @bob\nHALT", balance=5000)
    tx = _call(contract, 12_000, writes=[StateKey.balance(BOB)])
    _, receipt = apply_tx(state, tx, gas)
    assert receipt.applied
    assert receipt.gas_used == 2000 + 1 + 100 + 1
    assert receipt.refund == 12_000 - 2102
    assert state.balance(BOB) == 2000
    assert state.balance(contract) == 3000
    assert receipt.balance_change(BOB) == (0, 2000)


def test_undeclared_write_rolls_back(gas):
    state, contract = _deployed("PUSH 1\nSTORE count\nHALT")
    _, receipt = apply_tx(state, _call(contract, 5000), gas)
    assert receipt.reason == RollbackReason.UNDECLARED_WRITE
    assert state.get(StateKey.storage(contract, "count")) == 0


def test_out_of_gas_charges_the_whole_limit(gas):
    state, contract = _deployed("BURN 5000\nHALT")
    _, receipt = apply_tx(state, _call(contract, 2100), gas)
    assert receipt.reason == RollbackReason.OUT_OF_GAS
    assert receipt.gas_used == 2100
    assert receipt.refund == 0


def test_counter_and_stack_errors(gas):
    state, contract = _deployed("LOAD count\nPUSH 1\nADD\nSTORE count\nHALT")
    slot = StateKey.storage(contract, "count")
    for nonce in range(3):
        _, receipt = apply_tx(state, _call(contract, 3000, writes=[slot], nonce=nonce), gas)
        assert receipt.applied
    assert state.get(slot) == 3

    state, contract = _deployed("ADD\nHALT")
    _, receipt = apply_tx(state, _call(contract, 3000), gas)
    assert receipt.reason == RollbackReason.STACK_ERROR


def test_call_args_are_pushed_in_order(gas):
    state, contract = _deployed("TRANSFER\nHALT", balance=100)
    payload = encode_call_args([BOB, 40])
    assert parse_call_args(payload)[1] == 40
    _, receipt = apply_tx(state, _call(contract, 3000, writes=[StateKey.balance(BOB)], payload=payload), gas)
    assert receipt.applied
    assert state.balance(BOB) == 40


def test_call_to_empty_address_is_a_bad_call(gas):
    state = WorldState({StateKey.balance(ALICE): 10_000})
    contract = AccountId.contract_address(CAROL, 3)
    _, receipt = apply_tx(state, _call(contract, 3000), gas)
    assert receipt.reason == RollbackReason.BAD_CALL


def test_burn_and_derive_are_deterministic():
    seed = b"s" * 32
    assert burn_digest(10, seed) == burn_digest(10, seed)
    assert burn_digest(10, seed) != burn_digest(11, seed)
    assert derive_account(1, seed) == derive_account(1, seed)
    assert derive_account(1, seed) != derive_account(1, b"t" * 32)


def test_step_counter_counts_executed_txs(gas):
    reset_vm_steps()
    state = WorldState({StateKey.balance(ALICE): 5000})
    apply_tx(state, make_tx(KEYS, ALICE, 0, TxKind.TRANSFER, BOB, value=1, gas_limit=1000), gas)
    assert vm_steps() == 1


def test_run_contract_returns_effects_without_writing(gas):
    state, contract = _deployed("PUSH 2000\nTRANSFER @bob\nHALT", balance=5000)
    declared = frozenset({StateKey.balance(contract), StateKey.balance(BOB)})
    run = run_contract(state, CAROL, contract, "", 500, declared=declared, gas=gas)
    assert run.reason is None
    assert run.gas_used == 1 + 100 + 1
    assert run.effects == {StateKey.balance(contract): 3000, StateKey.balance(BOB): 2000}
    assert state.balance(BOB) == 0

    starved = run_contract(state, CAROL, contract, "", 50, declared=declared, gas=gas)
    assert starved.reason == RollbackReason.OUT_OF_GAS
    assert starved.effects == {}


def _storage_claim_on(account: AccountId) -> str:
    return json.dumps({"query": {"StorageValue": {"account": str(account), "slot": "x"}}, "result": 0, "penalty": 10})


def test_storage_query_on_a_user_is_a_bad_oath_query(gas):
    with pytest.raises(ValueError):
        Query.storage_value(ALICE, "x")
    state, contract = _deployed("HALT", balance=1000, creator=ALICE)
    claim = make_tx(
        KEYS, ALICE, 0, TxKind.OATH_CALL, contract,
        gas_limit=2100, payload=_storage_claim_on(ALICE), writes=[StateKey.balance(BLACKHOLE)],
    )
    _, receipt = apply_tx(state, claim, gas)
    assert receipt.reason == RollbackReason.BAD_OATH_QUERY
    assert receipt.gas_used == 2000
    assert state.balance(contract) == 1000


def test_zero_id_belongs_to_the_blackhole_only():
    with pytest.raises(ValueError):
        AccountId(bytes(32), AccountKind.USER)
    with pytest.raises(ValueError):
        AccountId(b"\x01" * 32, AccountKind.BLACKHOLE)
    with pytest.raises(ValueError):
        AccountId.from_text("user:" + "00" * 32)
    assert word_account(0) == BLACKHOLE
    assert word_account(0).kind == AccountKind.BLACKHOLE
