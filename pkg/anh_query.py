#!/usr/bin/env python3
"""
State queries

The questions a user asks about the chain: an exact balance, a minimal
accounting query (balance at least / transfer succeeded), or a contract
storage value. Shared by the executor, the oath opcode path in the VM, and the
accountant.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Union

from anh_types import AccountId, AccountKind, ChainPosition, StateKey

QueryResult = Union[int, bool]


class QueryKind(Enum):
    EXACT_BALANCE = "ExactBalance"
    BALANCE_AT_LEAST = "BalanceAtLeast"
    TRANSFER_SUCCEEDED = "TransferSucceeded"
    STORAGE_VALUE = "StorageValue"


STATE_QUERY_KINDS = (QueryKind.EXACT_BALANCE, QueryKind.BALANCE_AT_LEAST, QueryKind.STORAGE_VALUE)
MAQ_KINDS = (QueryKind.BALANCE_AT_LEAST, QueryKind.TRANSFER_SUCCEEDED)


@dataclass(frozen=True)
class Query:
    kind: QueryKind
    account: Optional[AccountId] = None
    at: Optional[ChainPosition] = None
    amount: int = 0
    slot: str = ""
    tx_id: str = ""

    @classmethod
    def exact_balance(cls, account: AccountId, at: Optional[ChainPosition] = None) -> "Query":
        return cls(QueryKind.EXACT_BALANCE, account=account, at=at)

    @classmethod
    def balance_at_least(cls, account: AccountId, amount: int, at: Optional[ChainPosition] = None) -> "Query":
        return cls(QueryKind.BALANCE_AT_LEAST, account=account, at=at, amount=amount)

    @classmethod
    def transfer_succeeded(cls, tx_id: str) -> "Query":
        return cls(QueryKind.TRANSFER_SUCCEEDED, tx_id=tx_id)

    @classmethod
    def storage_value(cls, contract: AccountId, slot: str, at: Optional[ChainPosition] = None) -> "Query":
        if contract.kind != AccountKind.CONTRACT:
            raise ValueError(f"StorageValue needs a contract account, got {contract.short}")
        return cls(QueryKind.STORAGE_VALUE, account=contract, at=at, slot=slot)

    @property
    def is_state_query(self) -> bool:
        return self.kind in STATE_QUERY_KINDS

    def seed_keys(self) -> List[StateKey]:
        if self.kind in (QueryKind.EXACT_BALANCE, QueryKind.BALANCE_AT_LEAST):
            return [StateKey.balance(self.account)]
        if self.kind == QueryKind.STORAGE_VALUE:
            return [StateKey.storage(self.account, self.slot)]
        return []

    def to_dict(self) -> Dict[str, Any]:
        body: Dict[str, Any] = {}
        if self.kind == QueryKind.TRANSFER_SUCCEEDED:
            body["tx"] = self.tx_id
        else:
            body["account"] = str(self.account)
            body["at"] = "end" if self.at is None else [self.at.height, self.at.offset]
        if self.kind == QueryKind.BALANCE_AT_LEAST:
            body["amount"] = self.amount
        if self.kind == QueryKind.STORAGE_VALUE:
            body["slot"] = self.slot
        return {self.kind.value: body}

    @classmethod
    def from_dict(
        cls,
        data: Dict[str, Any],
        account_resolver: Optional[Callable[[str], AccountId]] = None,
        position_resolver: Optional[Callable[[Any], Optional[ChainPosition]]] = None,
        tx_resolver: Optional[Callable[[str], str]] = None,
    ) -> "Query":
        """Parse {"ExactBalance": {"account": ..., "at": ...}} and friends"""
        if not isinstance(data, dict) or len(data) != 1:
            raise ValueError("query must be an object with exactly one kind")
        kind_name, body = next(iter(data.items()))
        kind = QueryKind(kind_name)
        resolve_account = account_resolver or AccountId.from_text
        resolve_position = position_resolver or parse_position
        if kind == QueryKind.TRANSFER_SUCCEEDED:
            tx_ref = body["tx"]
            return cls.transfer_succeeded(tx_resolver(tx_ref) if tx_resolver else tx_ref)
        account = resolve_account(body["account"])
        at = resolve_position(body.get("at", "end"))
        if kind == QueryKind.BALANCE_AT_LEAST:
            return cls.balance_at_least(account, int(body["amount"]), at)
        if kind == QueryKind.STORAGE_VALUE:
            return cls.storage_value(account, str(body["slot"]), at)
        return cls.exact_balance(account, at)


def parse_position(value: Any) -> Optional[ChainPosition]:
    if value is None or value == "end":
        return None
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return ChainPosition(int(value[0]), int(value[1]))
    if isinstance(value, dict) and "height" in value:
        return ChainPosition(int(value["height"]), int(value.get("offset", 0)))
    raise ValueError(f"cannot parse chain position {value!r}")


def evaluate_state_query(query: Query, read: Callable[[StateKey], Any]) -> QueryResult:
    """Answer a state query given a reader for the state at the query's position"""
    if query.kind == QueryKind.EXACT_BALANCE:
        return read(StateKey.balance(query.account))
    if query.kind == QueryKind.BALANCE_AT_LEAST:
        return read(StateKey.balance(query.account)) >= query.amount
    if query.kind == QueryKind.STORAGE_VALUE:
        return read(StateKey.storage(query.account, query.slot))
    raise ValueError(f"{query.kind.value} is not a state query")


def results_match(claimed: Any, actual: QueryResult) -> bool:
    if isinstance(actual, bool) or isinstance(claimed, bool):
        return isinstance(claimed, bool) and isinstance(actual, bool) and claimed == actual
    return isinstance(claimed, int) and claimed == actual
