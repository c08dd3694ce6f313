"""Inverted index postings and expense prefix sums."""
import pytest
from conftest import transfer
from hypothesis import given, settings
from hypothesis import strategies as st

from anh_config import DEFAULT_GAS_TABLE
from anh_errors import DuplicateBlockError
from anh_ledger import Ledger
from anh_txindex import InvertedIndex, TxLocator, build_index
from anh_types import AccountId, ChainPosition, Keyring, StateKey
from anh_vm import GasTable

ALICE = AccountId.from_name("alice")
BOB = AccountId.from_name("bob")
CAROL = AccountId.from_name("carol")


def _chain(values_per_block):
    gas = GasTable.from_dict(DEFAULT_GAS_TABLE)
    keyring = Keyring(3)
    ledger = Ledger.genesis({ALICE: 10**9, CAROL: 10**9}, keyring, gas)
    nonce = 0
    for values in values_per_block:
        txs = []
        for value in values:
            txs.append(transfer(keyring, gas, ALICE, nonce, BOB, value))
            nonce += 1
        ledger.seal_block(txs)
    return ledger


def test_postings_follow_chain_order():
    ledger = _chain([[1, 2], [3]])
    index = build_index(ledger.blocks)
    locs = index.txs_touching(StateKey.balance(BOB))
    assert [loc.position for loc in locs] == [ChainPosition(1, 0), ChainPosition(1, 1), ChainPosition(2, 0)]
    assert index.sent_before(ALICE, ChainPosition(1, 1)) == locs[:1]
    assert index.txs_touching(StateKey.balance(CAROL)) == []


def test_touched_keys_include_nonce_and_balances():
    ledger = _chain([[5]])
    index = build_index(ledger.blocks)
    assert StateKey.nonce(ALICE) in index.by_key
    assert StateKey.balance(ALICE) in index.by_key
    assert set(index.keys_of(ALICE)) == {StateKey.balance(ALICE), StateKey.nonce(ALICE)}


def test_total_expenses_counts_value_plus_reservation():
    ledger = _chain([[100, 200]])
    index = build_index(ledger.blocks)
    assert index.total_expenses(ALICE) == 300 + 2 * 1000
    assert index.total_expenses(ALICE, ChainPosition(1, 1)) == 1100
    assert index.total_expenses(ALICE, TxLocator(1, 1, "x")) == 1100
    assert index.total_expenses(BOB) == 0


@settings(max_examples=40, deadline=None)
@given(
    blocks=st.lists(st.lists(st.integers(0, 5000), max_size=4), min_size=1, max_size=4),
    cut=st.tuples(st.integers(0, 5), st.integers(0, 4)),
)
def test_total_expenses_matches_a_scan(blocks, cut):
    ledger = _chain(blocks)
    index = build_index(ledger.blocks)
    upto = ChainPosition(*cut)
    expected = sum(tx.total_expense for _, tx in ledger.iter_txs(upto) if tx.sender == ALICE)
    assert index.total_expenses(ALICE, upto) == expected


def test_reindexing_same_block_is_a_no_op():
    ledger = _chain([[1]])
    index = build_index(ledger.blocks)
    index.index_block(ledger.blocks[1])
    assert len(index.txs_touching(StateKey.balance(BOB))) == 1


def test_conflicting_block_at_same_height_is_refused():
    first = _chain([[1]])
    second = _chain([[2]])
    index = build_index(first.blocks)
    with pytest.raises(DuplicateBlockError):
        index.index_block(second.blocks[1])


def test_dump_filters_by_account():
    ledger = _chain([[7]])
    data = InvertedIndex().index_block(ledger.blocks[1]).dump(BOB)
    assert data["by_sender"] == {}
    assert list(data["by_key"]) == [str(StateKey.balance(BOB))]
