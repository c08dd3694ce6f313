#!/usr/bin/env python3
"""
ANH ledger

Append-only, hash-linked chain of blocks. Blocks carry transactions only, no
world-state commitment, so sealing and validating never run a contract.
Admission checks the transaction shape, id, signature, nonce, and that the
sender's zero-cost balance covers the full fee reservation.

The zero-cost ledger is maintained eagerly next to the chain: it is the lower
bound of every balance that is provably funded by genesis tokens through
direct user-to-user transfers.

On-disk layout: one file per block, <dir>/block_<height:08d>.json, holding the
canonical JSON (sorted keys, compact separators, UTF-8) of Block.to_dict().
The block hash is SHA-256 over the canonical JSON of
{"height", "prev_hash", "tx_ids", "allocations"} (allocations on genesis only).
"""
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

from anh_errors import AdmissionError, AmountError, ChainError, GenesisError
from anh_log import get_logger
from anh_types import (
    BLACKHOLE,
    MAX_TOKEN,
    AccountId,
    AccountKind,
    ChainPosition,
    KeyKind,
    Keyring,
    StateKey,
    Transaction,
    TxKind,
    canonical_json,
    sha256_hex,
)
from anh_vm import GasTable

logger = get_logger(__name__)

GENESIS_PREV_HASH = "0" * 64


class RejectReason(Enum):
    MALFORMED = "MalformedTx"
    BAD_TX_ID = "BadTxId"
    BAD_SIGNATURE = "BadSignature"
    BAD_NONCE = "BadNonce"
    INSUFFICIENT_ZERO_COST_FEE = "InsufficientZeroCostFee"


@dataclass(frozen=True)
class AdmitDecision:
    accepted: bool
    reason: Optional[RejectReason] = None

    def __bool__(self) -> bool:
        return self.accepted

    def to_dict(self) -> Dict[str, Any]:
        return {"decision": "Accepted" if self.accepted else "Rejected", "reason": self.reason.value if self.reason else None}


ACCEPTED = AdmitDecision(True)


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    txs: Tuple[Transaction, ...]
    allocations: Tuple[Tuple[AccountId, int], ...] = ()
    block_hash: str = ""

    @property
    def tx_ids(self) -> List[str]:
        return [tx.tx_id for tx in self.txs]

    def header_dict(self) -> Dict[str, Any]:
        header: Dict[str, Any] = {"height": self.height, "prev_hash": self.prev_hash, "tx_ids": self.tx_ids}
        if self.height == 0:
            header["allocations"] = [[str(a), amount] for a, amount in self.allocations]
        return header

    def compute_hash(self) -> str:
        return sha256_hex(canonical_json(self.header_dict()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "block_hash": self.block_hash,
            "allocations": [[str(a), amount] for a, amount in self.allocations],
            "txs": [tx.to_dict() for tx in self.txs],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Block":
        return cls(
            height=int(data["height"]),
            prev_hash=data["prev_hash"],
            txs=tuple(Transaction.from_dict(t) for t in data.get("txs", [])),
            allocations=tuple((AccountId.from_text(a), int(v)) for a, v in data.get("allocations", [])),
            block_hash=data.get("block_hash", ""),
        )

    @classmethod
    def build(cls, height: int, prev_hash: str, txs: Iterable[Transaction], allocations=()) -> "Block":
        block = cls(height, prev_hash, tuple(txs), tuple(allocations))
        return cls(block.height, block.prev_hash, block.txs, block.allocations, block.compute_hash())


# ---------------------------------------------------------------------------
# Zero-cost ledger
# ---------------------------------------------------------------------------

def zero_cost_effect(tx: Transaction, zc_of) -> Tuple[Dict[AccountId, int], bool]:
    """
    Zero-cost update for one transaction.

    Returns:
        (new zc values by account, whether the tx is a transfer whose success
        the zero-cost ledger alone guarantees)
    """
    sender = tx.sender
    remaining = max(0, zc_of(sender) - tx.reservation)
    updates = {sender: remaining}
    confirmed = False
    if tx.kind == TxKind.TRANSFER and remaining >= tx.value:
        confirmed = True
        updates[sender] = remaining - tx.value
        if tx.recipient.is_user:
            base = updates[sender] if tx.recipient == sender else zc_of(tx.recipient)
            updates[tx.recipient] = base + tx.value
    else:
        updates[sender] = max(0, remaining - tx.value)
    return updates, confirmed


class ZeroCostLedger:
    """zc_balance per account, with per-account history for lookups at past positions"""

    def __init__(self):
        self._balances: Dict[AccountId, int] = {}
        self._history: Dict[AccountId, List[Tuple[ChainPosition, int]]] = {}
        self.confirmed: Set[str] = set()

    def balance(self, account: AccountId) -> int:
        return self._balances.get(account, 0)

    def balance_at(self, account: AccountId, position: Optional[ChainPosition]) -> int:
        """zc balance just before position (None means the current tip)"""
        if position is None:
            return self.balance(account)
        value = 0
        for written_at, amount in self._history.get(account, ()):
            if written_at >= position:
                break
            value = amount
        return value

    def _set(self, account: AccountId, amount: int, position: ChainPosition) -> None:
        self._balances[account] = amount
        self._history.setdefault(account, []).append((position, amount))

    def credit_genesis(self, account: AccountId, amount: int) -> None:
        self._set(account, self.balance(account) + amount, ChainPosition(0, 0))

    def apply_tx(self, tx: Transaction, position: ChainPosition) -> bool:
        updates, confirmed = zero_cost_effect(tx, self.balance)
        for account, amount in updates.items():
            self._set(account, amount, position)
        if confirmed:
            self.confirmed.add(tx.tx_id)
        return confirmed

    def is_confirmed(self, tx_id: str) -> bool:
        return tx_id in self.confirmed

    def snapshot(self) -> Dict[str, int]:
        return {str(a): v for a, v in sorted(self._balances.items(), key=lambda item: item[0].hex)}


def update_zero_cost(block: Block, zc: ZeroCostLedger) -> ZeroCostLedger:
    """Apply one validated block to the zero-cost ledger (in place) and return it"""
    if block.height == 0:
        for account, amount in block.allocations:
            zc.credit_genesis(account, amount)
    for offset, tx in enumerate(block.txs):
        zc.apply_tx(tx, ChainPosition(block.height, offset))
    return zc


# ---------------------------------------------------------------------------
# Admission
# ---------------------------------------------------------------------------

def check_shape(tx: Transaction, gas: GasTable) -> bool:
    """Static well-formedness: everything checkable from the tx alone"""
    try:
        if tx.sender == BLACKHOLE or tx.sender.kind != AccountKind.USER:
            return False
        if tx.nonce < 0 or tx.gas_price < 1 or tx.value < 0 or tx.value > MAX_TOKEN:
            return False
        if tx.gas_limit < gas.intrinsic_gas(tx.kind):
            return False
        _ = tx.total_expense
    except AmountError:
        return False
    declared = tx.declared_write_set
    if StateKey.balance(tx.sender) not in declared or StateKey.balance(tx.recipient) not in declared:
        return False
    for key in declared:
        if key.kind == KeyKind.CODE:
            return False
        if key.kind == KeyKind.STORAGE and key.account.kind != AccountKind.CONTRACT:
            return False
    if tx.kind == TxKind.CONTRACT_CREATE:
        return tx.recipient == AccountId.contract_address(tx.sender, tx.nonce)
    if tx.kind in (TxKind.CONTRACT_CALL, TxKind.OATH_CALL):
        return tx.recipient.kind == AccountKind.CONTRACT
    return True


class _AdmissionView:
    """Chain state plus not-yet-sealed transactions, without copying the chain's maps"""

    def __init__(self, ledger: "Ledger"):
        self.ledger = ledger
        self.zc: Dict[AccountId, int] = {}
        self.sent: Dict[AccountId, int] = {}

    def zc_of(self, account: AccountId) -> int:
        if account in self.zc:
            return self.zc[account]
        return self.ledger.zero_cost.balance(account)

    def sent_by(self, account: AccountId) -> int:
        if account in self.sent:
            return self.sent[account]
        return self.ledger.sent_count(account)

    def admit(self, tx: Transaction) -> AdmitDecision:
        ledger = self.ledger
        if not check_shape(tx, ledger.gas):
            return AdmitDecision(False, RejectReason.MALFORMED)
        if tx.tx_id != tx.compute_id():
            return AdmitDecision(False, RejectReason.BAD_TX_ID)
        if not ledger.keyring.verify(tx.sender, tx.signing_bytes(), tx.signature):
            return AdmitDecision(False, RejectReason.BAD_SIGNATURE)
        if tx.nonce != self.sent_by(tx.sender):
            return AdmitDecision(False, RejectReason.BAD_NONCE)
        if self.zc_of(tx.sender) < tx.reservation:
            return AdmitDecision(False, RejectReason.INSUFFICIENT_ZERO_COST_FEE)
        return ACCEPTED

    def accept(self, tx: Transaction) -> None:
        updates, _ = zero_cost_effect(tx, self.zc_of)
        self.zc.update(updates)
        self.sent[tx.sender] = self.sent_by(tx.sender) + 1


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------

class Ledger:
    """
    The chain. One writer appends blocks; readers only ever see whole blocks.

    Args:
        keyring: Verifies the simulated signatures
        gas: Gas table, needed for the intrinsic-gas shape check
    """

    def __init__(self, keyring: Keyring, gas: GasTable):
        self.keyring = keyring
        self.gas = gas
        self.blocks: List[Block] = []
        self.zero_cost = ZeroCostLedger()
        self.allocations: Dict[AccountId, int] = {}
        self._sent: Dict[AccountId, int] = {}
        self._positions: Dict[str, ChainPosition] = {}

    # -- construction -------------------------------------------------------
    @classmethod
    def genesis(
        cls,
        allocations: Union[Mapping[AccountId, int], Iterable[Tuple[AccountId, int]]],
        keyring: Keyring,
        gas: GasTable,
    ) -> "Ledger":
        pairs = list(allocations.items()) if isinstance(allocations, Mapping) else list(allocations)
        if not pairs:
            raise GenesisError("empty genesis")
        seen: Set[AccountId] = set()
        total = 0
        for account, amount in pairs:
            if account in seen:
                raise GenesisError(f"duplicate account in allocations: {account.short}")
            if account == BLACKHOLE:
                raise GenesisError("the blackhole cannot receive a genesis allocation")
            if not isinstance(amount, int) or amount <= 0:
                raise GenesisError(f"allocation for {account.short} must be positive, got {amount!r}")
            seen.add(account)
            total += amount
        if total > MAX_TOKEN:
            raise GenesisError("total supply overflows")

        ordered = tuple(sorted(pairs, key=lambda item: item[0].hex))
        ledger = cls(keyring, gas)
        ledger._append(Block.build(0, GENESIS_PREV_HASH, (), ordered))
        logger.info(f"Genesis with {len(ordered)} allocations, supply {total}")
        return ledger

    # -- reads --------------------------------------------------------------
    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip_hash(self) -> str:
        return self.blocks[-1].block_hash

    @property
    def total_supply(self) -> int:
        return sum(self.allocations.values())

    def genesis_allocation(self, account: AccountId) -> int:
        return self.allocations.get(account, 0)

    def sent_count(self, account: AccountId) -> int:
        return self._sent.get(account, 0)

    def locate(self, tx_id: str) -> Optional[ChainPosition]:
        return self._positions.get(tx_id)

    def tx_at(self, position: ChainPosition) -> Transaction:
        return self.blocks[position.height].txs[position.offset]

    def get_tx(self, tx_id: str) -> Optional[Transaction]:
        position = self.locate(tx_id)
        return None if position is None else self.tx_at(position)

    def iter_txs(self, upto: Optional[ChainPosition] = None) -> Iterator[Tuple[ChainPosition, Transaction]]:
        """Chain-ordered (position, tx) strictly before upto"""
        for block in self.blocks:
            for offset, tx in enumerate(block.txs):
                position = ChainPosition(block.height, offset)
                if upto is not None and position >= upto:
                    return
                yield position, tx

    @property
    def tx_count(self) -> int:
        return len(self._positions)

    # -- admission ----------------------------------------------------------
    def admit(self, tx: Transaction) -> AdmitDecision:
        """Admission against the current tip. Never executes anything."""
        return _AdmissionView(self).admit(tx)

    def filter_admissible(self, candidates: Iterable[Transaction]) -> Tuple[List[Transaction], List[Tuple[Transaction, RejectReason]]]:
        """
        Mempool pass: keep, in order, each candidate that is admissible after
        the ones kept before it.
        """
        view = _AdmissionView(self)
        kept: List[Transaction] = []
        rejected: List[Tuple[Transaction, RejectReason]] = []
        for tx in candidates:
            decision = view.admit(tx)
            if decision.accepted:
                view.accept(tx)
                kept.append(tx)
            else:
                rejected.append((tx, decision.reason))
        if rejected:
            logger.debug(f"Mempool rejected {len(rejected)} of {len(kept) + len(rejected)} candidates")
        return kept, rejected

    def seal_block(self, pending: Iterable[Transaction]) -> Block:
        view = _AdmissionView(self)
        txs = list(pending)
        for index, tx in enumerate(txs):
            decision = view.admit(tx)
            if not decision.accepted:
                raise AdmissionError(index, decision.reason)
            view.accept(tx)
        block = Block.build(self.height + 1, self.tip_hash, txs)
        self._append(block)
        logger.info(f"Sealed block {block.height} with {len(txs)} txs ({block.block_hash[:12]})")
        return block

    def validate_block(self, block: Block) -> Tuple[bool, List[str]]:
        """Re-check a candidate next block. Returns (ok, reasons)."""
        reasons: List[str] = []
        if block.height != self.height + 1:
            reasons.append(f"height {block.height} does not extend tip {self.height}")
        if block.prev_hash != self.tip_hash:
            reasons.append("prev_hash does not match the tip")
        if block.allocations:
            reasons.append("only genesis carries allocations")
        if block.block_hash != block.compute_hash():
            reasons.append("block_hash does not match contents")
        view = _AdmissionView(self)
        for index, tx in enumerate(block.txs):
            decision = view.admit(tx)
            if not decision.accepted:
                reasons.append(f"tx #{index}: {decision.reason.value}")
                continue
            view.accept(tx)
        return not reasons, reasons

    def append_block(self, block: Block) -> None:
        ok, reasons = self.validate_block(block)
        if not ok:
            raise ChainError(f"block {block.height} rejected: {'; '.join(reasons)}")
        self._append(block)

    def _append(self, block: Block) -> None:
        self.blocks.append(block)
        if block.height == 0:
            self.allocations = dict(block.allocations)
        for offset, tx in enumerate(block.txs):
            self._positions[tx.tx_id] = ChainPosition(block.height, offset)
            self._sent[tx.sender] = self._sent.get(tx.sender, 0) + 1
        update_zero_cost(block, self.zero_cost)

    # -- persistence --------------------------------------------------------
    def save(self, directory: Union[str, Path]) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for block in self.blocks:
            path = out / f"block_{block.height:08d}.json"
            path.write_bytes(canonical_json(block.to_dict()))
        logger.info(f"Saved {len(self.blocks)} blocks to {out}")
        return out

    @classmethod
    def load(cls, directory: Union[str, Path], keyring: Keyring, gas: GasTable) -> "Ledger":
        """Reload a saved chain, re-validating every block"""
        src = Path(directory)
        files = sorted(src.glob("block_*.json"))
        if not files:
            raise ChainError(f"no block files in {src}")
        blocks: List[Block] = []
        for expected, path in enumerate(files):
            try:
                block = Block.from_dict(json.loads(path.read_text(encoding="utf-8")))
            except (OSError, ValueError, KeyError) as e:
                raise ChainError(f"cannot read {path.name}: {e}")
            if block.height != expected:
                raise ChainError(f"{path.name} holds height {block.height}, expected {expected}")
            blocks.append(block)

        genesis = blocks[0]
        if genesis.prev_hash != GENESIS_PREV_HASH or genesis.txs or genesis.block_hash != genesis.compute_hash():
            raise ChainError("genesis block is malformed")
        try:
            ledger = cls.genesis(genesis.allocations, keyring, gas)
        except GenesisError as e:
            raise ChainError(f"genesis block is malformed: {e}")
        for block in blocks[1:]:
            ledger.append_block(block)
        return ledger
