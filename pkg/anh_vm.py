#!/usr/bin/env python3
"""
ANH contract VM

A small deterministic stack machine. Contracts are written as one opcode per
line:

    PUSH <int>          push a word
    ADD / SUB / MUL     pop a, pop b, push b op a
    LOAD <slot>         push storage[slot] of the running contract
    STORE <slot>        pop value into storage[slot]
    JUMPIF <index>      pop cond, jump to instruction index when cond != 0
    TRANSFER [<acct>]   pop amount (and recipient unless given), pay from contract
    BURN <n>            spend n gas, push a digest of (n, tx seed)
    DERIVE_ACCOUNT      pop v, push an account id derived from (v, tx seed)
    HALT                stop

Every transaction application is a pure function of (state, tx, gas table):
the fee is reserved up front, the body runs against a journal, and any invalid
operation discards the journal. Gas used is charged either way, the rest of the
reservation goes back to the sender, and the sender nonce always increments.
"""
import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple, Union

from anh_config import load_gas_config
from anh_errors import AmountError, AssemblyError, GasTableError, InternalInvariantViolation
from anh_log import get_logger
from anh_query import Query, evaluate_state_query, results_match
from anh_types import (
    BLACKHOLE,
    AccountId,
    AccountKind,
    ChainPosition,
    KeyKind,
    StateKey,
    Transaction,
    TxKind,
    canonical_json,
    sha256_hex,
    tok_add,
    tok_mul,
    tok_sub,
)

logger = get_logger(__name__)

WORD_MAX = 2**256 - 1
MAX_STACK = 1024

OPCODES = ("PUSH", "ADD", "SUB", "MUL", "LOAD", "STORE", "JUMPIF", "TRANSFER", "BURN", "DERIVE_ACCOUNT", "HALT")
INT_OPERAND = ("PUSH", "JUMPIF", "BURN")
SLOT_OPERAND = ("LOAD", "STORE")


# ---------------------------------------------------------------------------
# Step counter
# ---------------------------------------------------------------------------

_steps_lock = threading.Lock()
_steps = 0


def _count_steps(n: int = 1) -> None:
    global _steps
    with _steps_lock:
        _steps += n


def vm_steps() -> int:
    """Opcodes executed plus transactions applied, process-wide"""
    with _steps_lock:
        return _steps


def reset_vm_steps() -> None:
    global _steps
    with _steps_lock:
        _steps = 0


# ---------------------------------------------------------------------------
# Gas table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GasTable:
    intrinsic: Dict[str, int]
    ops: Dict[str, int]

    def __post_init__(self):
        for kind in TxKind:
            if kind.value not in self.intrinsic:
                raise GasTableError(f"gas table has no intrinsic cost for '{kind.value}'")
        for op in OPCODES + ("QUERY",):
            if op not in self.ops:
                raise GasTableError(f"gas table has no cost for opcode {op}")
        for section, entries in (("intrinsic", self.intrinsic), ("ops", self.ops)):
            for name, cost in entries.items():
                if not isinstance(cost, int) or isinstance(cost, bool) or cost < 1:
                    raise GasTableError(f"{section}.{name} must be an integer >= 1, got {cost!r}")

    @classmethod
    def from_dict(cls, data: Dict[str, Dict[str, int]]) -> "GasTable":
        return cls(intrinsic=dict(data.get("intrinsic", {})), ops=dict(data.get("ops", {})))

    @classmethod
    def load(cls, path: Optional[str] = None, override: Optional[Dict[str, Any]] = None) -> "GasTable":
        return cls.from_dict(load_gas_config(path, override))

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {"intrinsic": dict(self.intrinsic), "ops": dict(self.ops)}

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))

    def intrinsic_gas(self, kind: TxKind) -> int:
        return self.intrinsic[kind.value]

    def op_cost(self, ins: "Instruction") -> int:
        if ins.op == "BURN":
            return max(int(ins.arg), self.ops["BURN"])
        return self.ops[ins.op]


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

class Instruction(NamedTuple):
    op: str
    arg: Union[int, str, AccountId, None] = None

    def text(self) -> str:
        return self.op if self.arg is None else f"{self.op} {self.arg}"


Program = Tuple[Instruction, ...]


def assemble(text: str, resolver: Optional[Callable[[str], AccountId]] = None) -> Program:
    """
    Parse assembly text into a program.

    Args:
        text: One opcode per line; '#' starts a comment, ';' also separates opcodes
        resolver: Maps '@name' account operands to ids (scenario loader)

    Returns:
        tuple of Instruction
    """
    program: List[Instruction] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        for chunk in raw.split("#", 1)[0].split(";"):
            parts = chunk.split()
            if not parts:
                continue
            op = parts[0].upper()
            operands = parts[1:]
            if op not in OPCODES:
                raise AssemblyError(f"unknown opcode '{parts[0]}'", lineno)
            if op in INT_OPERAND or op in SLOT_OPERAND:
                if len(operands) != 1:
                    raise AssemblyError(f"{op} takes exactly one operand", lineno)
            elif op == "TRANSFER":
                if len(operands) > 1:
                    raise AssemblyError("TRANSFER takes at most one operand", lineno)
            elif operands:
                raise AssemblyError(f"{op} takes no operand", lineno)

            arg: Union[int, str, AccountId, None] = None
            if op in INT_OPERAND:
                try:
                    arg = int(operands[0], 0)
                except ValueError:
                    raise AssemblyError(f"{op} operand must be an integer, got '{operands[0]}'", lineno)
                if not 0 <= arg <= WORD_MAX:
                    raise AssemblyError(f"{op} operand out of range", lineno)
            elif op in SLOT_OPERAND:
                arg = operands[0]
            elif op == "TRANSFER" and operands:
                arg = _parse_account_operand(operands[0], resolver, lineno)
            program.append(Instruction(op, arg))

    for index, ins in enumerate(program):
        if ins.op == "JUMPIF" and not 0 <= ins.arg < len(program):
            raise AssemblyError(f"jump target {ins.arg} out of range at instruction {index}")
    return tuple(program)


def _parse_account_operand(token: str, resolver: Optional[Callable[[str], AccountId]], lineno: int) -> AccountId:
    if token.startswith("@"):
        if resolver is None:
            raise AssemblyError(f"unresolved account reference '{token}'", lineno)
        try:
            return resolver(token[1:])
        except KeyError:
            raise AssemblyError(f"unknown account '{token}'", lineno)
    try:
        return AccountId.from_text(token)
    except ValueError as e:
        raise AssemblyError(f"bad account operand '{token}': {e}", lineno)


def format_program(program: Program) -> str:
    """Canonical on-chain text of a program"""
    return "\n".join(ins.text() for ins in program)


@dataclass(frozen=True)
class ContractRecord:
    """Value stored under Code(contract)"""
    code: Program
    creator: AccountId

    @property
    def code_hash(self) -> str:
        return sha256_hex(format_program(self.code).encode("utf-8"))

    def to_dict(self) -> Dict[str, str]:
        return {"creator": str(self.creator), "code_hash": self.code_hash}


def storage_footprint(program: Program, contract: AccountId) -> Set[StateKey]:
    """Keys a program can touch that are knowable without running it"""
    keys: Set[StateKey] = set()
    for ins in program:
        if ins.op in SLOT_OPERAND:
            keys.add(StateKey.storage(contract, ins.arg))
        elif ins.op == "TRANSFER" and isinstance(ins.arg, AccountId):
            keys.add(StateKey.balance(ins.arg))
    return keys


# ---------------------------------------------------------------------------
# Words, digests and payloads
# ---------------------------------------------------------------------------

def account_word(account: AccountId) -> int:
    return int.from_bytes(account.id, "big")


def word_account(word: int) -> AccountId:
    if word == 0:
        return BLACKHOLE
    return AccountId(word.to_bytes(32, "big"), AccountKind.USER)


def burn_digest(n: int, seed: bytes) -> int:
    return int.from_bytes(hashlib.sha256(b"burn" + n.to_bytes(32, "big") + seed).digest(), "big")


def derive_account(value: int, seed: bytes) -> AccountId:
    digest = hashlib.sha256(b"derive" + value.to_bytes(32, "big") + seed).digest()
    return AccountId(digest, AccountKind.USER)


def parse_call_args(payload: str) -> List[int]:
    """Call payload: JSON list of ints and account ids, pushed in order"""
    if not payload.strip():
        return []
    items = json.loads(payload)
    if not isinstance(items, list):
        raise ValueError("call payload must be a JSON list")
    words: List[int] = []
    for item in items:
        if isinstance(item, bool):
            raise ValueError("booleans are not words")
        if isinstance(item, int):
            if not 0 <= item <= WORD_MAX:
                raise ValueError(f"word {item} out of range")
            words.append(item)
        elif isinstance(item, str):
            words.append(account_word(AccountId.from_text(item)))
        else:
            raise ValueError(f"unsupported call argument {item!r}")
    return words


def encode_call_args(args: List[Union[int, AccountId]]) -> str:
    return json.dumps([a if isinstance(a, int) else str(a) for a in args], separators=(",", ":"))


@dataclass(frozen=True)
class OathClaim:
    query: Query
    result: Any
    penalty: int

    def to_payload(self) -> str:
        return canonical_json({"query": self.query.to_dict(), "result": self.result, "penalty": self.penalty}).decode("utf-8")

    @classmethod
    def from_payload(cls, payload: str) -> "OathClaim":
        data = json.loads(payload)
        penalty = data["penalty"]
        if not isinstance(penalty, int) or isinstance(penalty, bool) or penalty < 0:
            raise ValueError(f"bad penalty {penalty!r}")
        return cls(Query.from_dict(data["query"]), data["result"], penalty)


# ---------------------------------------------------------------------------
# Receipts
# ---------------------------------------------------------------------------

class ReceiptStatus(Enum):
    APPLIED = "Applied"
    ROLLED_BACK = "RolledBack"
    FEE_RESERVED = "FeeReserved"


class RollbackReason(Enum):
    INSUFFICIENT_BALANCE = "InsufficientBalance"
    UNDECLARED_WRITE = "UndeclaredWrite"
    UNDECLARED_READ = "UndeclaredRead"
    OUT_OF_GAS = "OutOfGas"
    STACK_ERROR = "StackError"
    ARITHMETIC_ERROR = "ArithmeticError"
    BAD_CALL = "BadCall"
    BAD_OATH_QUERY = "BadOathQuery"
    NOT_OATH_OWNER = "NotOathOwner"
    UNDERFUNDED_SLASH = "UnderfundedSlash"


def _value_json(value: Any) -> Any:
    if isinstance(value, ContractRecord):
        return value.to_dict()
    return value


@dataclass(frozen=True)
class ExecutionReceipt:
    tx_id: str
    sender: AccountId
    value: int
    reservation: int
    status: ReceiptStatus
    gas_used: int
    fee_charged: int
    refund: int
    state_delta: Tuple[Tuple[StateKey, Any, Any], ...] = ()
    reason: Optional[RollbackReason] = None

    @property
    def applied(self) -> bool:
        return self.status == ReceiptStatus.APPLIED

    def balance_change(self, account: AccountId) -> Tuple[int, int]:
        """(δ, δ') of an account's balance around this tx; (0, 0) when untouched"""
        key = StateKey.balance(account)
        for k, old, new in self.state_delta:
            if k == key:
                return old, new
        return 0, 0

    def delta_of(self, key: StateKey) -> Optional[Tuple[Any, Any]]:
        for k, old, new in self.state_delta:
            if k == key:
                return old, new
        return None

    @classmethod
    def fee_reserved(cls, tx: Transaction) -> "ExecutionReceipt":
        """View of a committed but never-executed tx"""
        return cls(
            tx_id=tx.tx_id,
            sender=tx.sender,
            value=tx.value,
            reservation=tx.reservation,
            status=ReceiptStatus.FEE_RESERVED,
            gas_used=0,
            fee_charged=tx.reservation,
            refund=0,
        )

    def to_dict(self) -> Dict[str, Any]:
        status = self.status.value
        if self.reason is not None:
            status = f"{status}({self.reason.value})"
        return {
            "tx_id": self.tx_id,
            "status": status,
            "gas_used": self.gas_used,
            "fee_charged": self.fee_charged,
            "refund": self.refund,
            "state_delta": [[str(k), _value_json(old), _value_json(new)] for k, old, new in self.state_delta],
        }


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def default_value(key: StateKey) -> Any:
    return None if key.kind == KeyKind.CODE else 0


class _Rollback(Exception):
    def __init__(self, reason: RollbackReason, gas_used: Optional[int] = None):
        super().__init__(reason.value)
        self.reason = reason
        self.gas_used = gas_used


class _Journal:
    """Buffered writes over a state; nothing reaches the state until commit"""

    def __init__(self, state):
        self.state = state
        self.pending: Dict[StateKey, Any] = {}

    def get(self, key: StateKey) -> Any:
        if key in self.pending:
            return self.pending[key]
        return self.state.get(key)

    def set(self, key: StateKey, value: Any) -> None:
        self.pending[key] = value

    def checkpoint(self) -> Dict[StateKey, Any]:
        return dict(self.pending)

    def restore(self, saved: Dict[StateKey, Any]) -> None:
        self.pending = saved


@dataclass
class ContractRun:
    effects: Dict[StateKey, Any] = field(default_factory=dict)
    gas_used: int = 0
    reason: Optional[RollbackReason] = None


def _move(view, declared: FrozenSet[StateKey], src: AccountId, dst: AccountId, amount: int) -> None:
    src_key, dst_key = StateKey.balance(src), StateKey.balance(dst)
    if src_key not in declared or dst_key not in declared:
        raise _Rollback(RollbackReason.UNDECLARED_WRITE)
    balance = view.get(src_key)
    if balance < amount:
        raise _Rollback(RollbackReason.INSUFFICIENT_BALANCE)
    view.set(src_key, tok_sub(balance, amount))
    view.set(dst_key, tok_add(view.get(dst_key), amount))


def run_contract(
    state,
    caller: AccountId,
    contract: AccountId,
    payload: str,
    gas_budget: int,
    declared: FrozenSet[StateKey] = frozenset(),
    seed: bytes = b"",
    gas: Optional[GasTable] = None,
) -> ContractRun:
    """
    Run the code stored at a contract against a state view.

    The state is only read; writes come back in ContractRun.effects and the
    caller decides whether to keep them. Failures are reported through
    ContractRun.reason, never raised.
    """
    gas = gas or GasTable.load()
    journal = _Journal(state)
    used = 0
    try:
        record = state.get(StateKey.code(contract))
        if not isinstance(record, ContractRecord):
            raise _Rollback(RollbackReason.BAD_CALL)
        try:
            stack = parse_call_args(payload)
        except (ValueError, json.JSONDecodeError):
            raise _Rollback(RollbackReason.BAD_CALL)
        if len(stack) > MAX_STACK:
            raise _Rollback(RollbackReason.STACK_ERROR)

        code = record.code
        pc = 0
        while pc < len(code):
            ins = code[pc]
            cost = gas.op_cost(ins)
            if used + cost > gas_budget:
                raise _Rollback(RollbackReason.OUT_OF_GAS, gas_budget)
            used += cost
            _count_steps()
            pc += 1
            op = ins.op

            if op == "HALT":
                break
            if op == "PUSH":
                stack.append(ins.arg)
            elif op in ("ADD", "SUB", "MUL"):
                if len(stack) < 2:
                    raise _Rollback(RollbackReason.STACK_ERROR)
                a = stack.pop()
                b = stack.pop()
                result = b + a if op == "ADD" else b - a if op == "SUB" else b * a
                if not 0 <= result <= WORD_MAX:
                    raise _Rollback(RollbackReason.ARITHMETIC_ERROR)
                stack.append(result)
            elif op == "LOAD":
                key = StateKey.storage(contract, ins.arg)
                if key not in declared:
                    raise _Rollback(RollbackReason.UNDECLARED_READ)
                stack.append(journal.get(key))
            elif op == "STORE":
                key = StateKey.storage(contract, ins.arg)
                if key not in declared:
                    raise _Rollback(RollbackReason.UNDECLARED_WRITE)
                if not stack:
                    raise _Rollback(RollbackReason.STACK_ERROR)
                journal.set(key, stack.pop())
            elif op == "JUMPIF":
                if not stack:
                    raise _Rollback(RollbackReason.STACK_ERROR)
                if stack.pop() != 0:
                    pc = ins.arg
            elif op == "TRANSFER":
                need = 1 if ins.arg is not None else 2
                if len(stack) < need:
                    raise _Rollback(RollbackReason.STACK_ERROR)
                amount = stack.pop()
                recipient = ins.arg if ins.arg is not None else word_account(stack.pop())
                _move(journal, declared, contract, recipient, amount)
            elif op == "BURN":
                stack.append(burn_digest(ins.arg, seed))
            elif op == "DERIVE_ACCOUNT":
                if not stack:
                    raise _Rollback(RollbackReason.STACK_ERROR)
                stack.append(account_word(derive_account(stack.pop(), seed)))

            if len(stack) > MAX_STACK:
                raise _Rollback(RollbackReason.STACK_ERROR)
    except _Rollback as rb:
        spent = rb.gas_used if rb.gas_used is not None else used
        logger.debug(f"contract {contract.short} called by {caller.short} rolled back: {rb.reason.value}")
        return ContractRun(gas_used=spent, reason=rb.reason)
    except AmountError:
        return ContractRun(gas_used=used, reason=RollbackReason.ARITHMETIC_ERROR)
    return ContractRun(effects=journal.pending, gas_used=used)


def _run_oath(journal: _Journal, tx: Transaction, gas: GasTable, budget: int, position: Optional[ChainPosition]) -> int:
    """Evaluate an oath claim; returns gas used. Mismatch moves the penalty to the blackhole."""
    record = journal.get(StateKey.code(tx.recipient))
    if not isinstance(record, ContractRecord):
        raise _Rollback(RollbackReason.BAD_CALL)
    if record.creator != tx.sender:
        raise _Rollback(RollbackReason.NOT_OATH_OWNER)
    try:
        claim = OathClaim.from_payload(tx.payload)
    except (ValueError, KeyError, TypeError, AttributeError):
        raise _Rollback(RollbackReason.BAD_OATH_QUERY)
    query = claim.query
    if not query.is_state_query:
        raise _Rollback(RollbackReason.BAD_OATH_QUERY)
    if query.at is not None and position is not None and query.at > position:
        raise _Rollback(RollbackReason.BAD_OATH_QUERY)

    cost = gas.ops["QUERY"] * max(1, len(query.seed_keys()))
    if cost > budget:
        raise _Rollback(RollbackReason.OUT_OF_GAS, budget)
    _count_steps()

    if query.at is None or query.at == position:
        actual = evaluate_state_query(query, journal.state.get)
    else:
        actual = evaluate_state_query(query, lambda key: journal.state.value_at(key, query.at))

    if not results_match(claim.result, actual):
        contract_key = StateKey.balance(tx.recipient)
        if journal.get(contract_key) < claim.penalty:
            raise _Rollback(RollbackReason.UNDERFUNDED_SLASH, cost)
        _move(journal, tx.declared_write_set, tx.recipient, BLACKHOLE, claim.penalty)
    return cost


def apply_tx(state, tx: Transaction, gas: GasTable, position: Optional[ChainPosition] = None):
    """
    Apply one committed transaction.

    Args:
        state: WorldState (anything with get / value_at / commit)
        tx: The transaction, already admitted
        gas: Gas table in force
        position: Chain position of tx; recorded in state history and used
                  to bound oath queries

    Returns:
        (state, ExecutionReceipt); state is updated in place
    """
    _count_steps()
    declared = tx.declared_write_set
    journal = _Journal(state)
    reservation = tx.reservation
    sender_bal = StateKey.balance(tx.sender)
    nonce_key = StateKey.nonce(tx.sender)

    balance = journal.get(sender_bal)
    if balance < reservation:
        raise InternalInvariantViolation(f"{tx.short()}: admitted tx cannot cover its fee reservation")
    journal.set(nonce_key, journal.get(nonce_key) + 1)
    journal.set(sender_bal, tok_sub(balance, reservation))
    saved = journal.checkpoint()

    intrinsic = gas.intrinsic_gas(tx.kind)
    used = intrinsic
    reason: Optional[RollbackReason] = None
    try:
        if intrinsic > tx.gas_limit:
            raise _Rollback(RollbackReason.OUT_OF_GAS)
        if tx.kind == TxKind.TRANSFER:
            _move(journal, declared, tx.sender, tx.recipient, tx.value)
        elif tx.kind == TxKind.CONTRACT_CREATE:
            code_key = StateKey.code(tx.recipient)
            if tx.recipient != AccountId.contract_address(tx.sender, tx.nonce) or journal.get(code_key) is not None:
                raise _Rollback(RollbackReason.BAD_CALL)
            try:
                program = assemble(tx.payload)
            except AssemblyError:
                raise _Rollback(RollbackReason.BAD_CALL)
            _move(journal, declared, tx.sender, tx.recipient, tx.value)
            journal.set(code_key, ContractRecord(program, tx.sender))
        elif tx.kind == TxKind.CONTRACT_CALL:
            _move(journal, declared, tx.sender, tx.recipient, tx.value)
            run = run_contract(journal, tx.sender, tx.recipient, tx.payload, tx.gas_limit - intrinsic, declared, tx.seed, gas)
            used += run.gas_used
            if run.reason is not None:
                raise _Rollback(run.reason)
            journal.pending.update(run.effects)
        elif tx.kind == TxKind.OATH_CALL:
            _move(journal, declared, tx.sender, tx.recipient, tx.value)
            used += _run_oath(journal, tx, gas, tx.gas_limit - intrinsic, position)
    except _Rollback as rb:
        if rb.gas_used is not None:
            used += rb.gas_used
        reason = rb.reason
        journal.restore(saved)
    except AmountError:
        reason = RollbackReason.ARITHMETIC_ERROR
        journal.restore(saved)

    used = min(used, tx.gas_limit)
    fee_charged = tok_mul(used, tx.gas_price)
    refund = tok_sub(reservation, fee_charged)
    if refund:
        journal.set(sender_bal, tok_add(journal.get(sender_bal), refund))

    delta = []
    for key, new in journal.pending.items():
        old = state.get(key)
        if old != new:
            delta.append((key, old, new))
    state.commit(journal.pending, position)

    receipt = ExecutionReceipt(
        tx_id=tx.tx_id,
        sender=tx.sender,
        value=tx.value,
        reservation=reservation,
        status=ReceiptStatus.APPLIED if reason is None else ReceiptStatus.ROLLED_BACK,
        gas_used=used,
        fee_charged=fee_charged,
        refund=refund,
        state_delta=tuple(delta),
        reason=reason,
    )
    if reason is not None:
        logger.debug(f"{tx.short()} rolled back: {reason.value} (gas {used})")
    return state, receipt
