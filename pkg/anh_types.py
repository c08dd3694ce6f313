#!/usr/bin/env python3
"""
ANH core domain types

Accounts, state keys, token arithmetic, transactions and the simulated
keyring that signs them. Canonical serialization lives here too, since block
hashes, transaction ids and reports are all computed over it.

Canonical form: JSON, keys sorted, separators (",", ":"), UTF-8.
"""
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, hmac

from anh_errors import AmountError

MAX_TOKEN = 2**128 - 1
ID_BYTES = 32
ZERO_ID = bytes(ID_BYTES)


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Token arithmetic: checked, never wraps
# ---------------------------------------------------------------------------

def check_amount(amount: int) -> int:
    if not isinstance(amount, int) or isinstance(amount, bool):
        raise AmountError(f"token amount must be an integer, got {amount!r}")
    if amount < 0:
        raise AmountError(f"negative token amount {amount}")
    if amount > MAX_TOKEN:
        raise AmountError(f"token amount {amount} overflows")
    return amount


def tok_add(a: int, b: int) -> int:
    return check_amount(check_amount(a) + check_amount(b))


def tok_sub(a: int, b: int) -> int:
    return check_amount(check_amount(a) - check_amount(b))


def tok_mul(a: int, b: int) -> int:
    return check_amount(check_amount(a) * check_amount(b))


# ---------------------------------------------------------------------------
# Accounts and state keys
# ---------------------------------------------------------------------------

class AccountKind(Enum):
    USER = "user"
    CONTRACT = "contract"
    BLACKHOLE = "blackhole"


@dataclass(frozen=True)
class AccountId:
    """32-byte account identifier. Equality and hashing use the id only."""
    id: bytes
    kind: AccountKind = field(default=AccountKind.USER, compare=False)

    def __post_init__(self):
        if len(self.id) != ID_BYTES:
            raise ValueError(f"account id must be {ID_BYTES} bytes, got {len(self.id)}")
        if (self.id == ZERO_ID) != (self.kind == AccountKind.BLACKHOLE):
            raise ValueError("the all-zero id is reserved for the blackhole, and only for it")

    @property
    def hex(self) -> str:
        return self.id.hex()

    @property
    def short(self) -> str:
        return f"{self.kind.value}:{self.hex[:8]}"

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.hex}"

    def __repr__(self) -> str:
        return f"AccountId({self.short})"

    @classmethod
    def from_name(cls, name: str, kind: AccountKind = AccountKind.USER) -> "AccountId":
        return cls(hashlib.sha256(f"account:{name}".encode("utf-8")).digest(), kind)

    @classmethod
    def from_text(cls, text: str) -> "AccountId":
        """Parse 'user:<hex>' / 'contract:<hex>' / 'blackhole:<hex>' (bare hex means user)"""
        kind = AccountKind.USER
        raw = text.strip()
        if ":" in raw:
            prefix, raw = raw.split(":", 1)
            kind = AccountKind(prefix)
        if raw.startswith("0x"):
            raw = raw[2:]
        return cls(bytes.fromhex(raw), kind)

    @classmethod
    def contract_address(cls, creator: "AccountId", nonce: int) -> "AccountId":
        digest = hashlib.sha256(b"contract" + creator.id + nonce.to_bytes(8, "big")).digest()
        return cls(digest, AccountKind.CONTRACT)

    @property
    def is_user(self) -> bool:
        return self.kind == AccountKind.USER


BLACKHOLE = AccountId(ZERO_ID, AccountKind.BLACKHOLE)


class KeyKind(Enum):
    BALANCE = "balance"
    NONCE = "nonce"
    STORAGE = "storage"
    CODE = "code"


@dataclass(frozen=True)
class StateKey:
    kind: KeyKind
    account: AccountId
    slot: str = ""

    @classmethod
    def balance(cls, account: AccountId) -> "StateKey":
        return cls(KeyKind.BALANCE, account)

    @classmethod
    def nonce(cls, account: AccountId) -> "StateKey":
        return cls(KeyKind.NONCE, account)

    @classmethod
    def storage(cls, contract: AccountId, slot: str) -> "StateKey":
        if contract.kind != AccountKind.CONTRACT:
            raise ValueError(f"storage keys must reference a contract, got {contract.short}")
        return cls(KeyKind.STORAGE, contract, slot)

    @classmethod
    def code(cls, contract: AccountId) -> "StateKey":
        return cls(KeyKind.CODE, contract)

    @property
    def sort_key(self) -> Tuple[str, str, str]:
        return (self.kind.value, self.account.hex, self.slot)

    def __str__(self) -> str:
        base = f"{self.kind.value}:{self.account}"
        return f"{base}:{self.slot}" if self.kind == KeyKind.STORAGE else base

    @classmethod
    def from_text(cls, text: str) -> "StateKey":
        kind_text, rest = text.split(":", 1)
        kind = KeyKind(kind_text)
        if kind == KeyKind.STORAGE:
            acct_kind, acct_hex, slot = rest.split(":", 2)
            return cls(kind, AccountId.from_text(f"{acct_kind}:{acct_hex}"), slot)
        return cls(kind, AccountId.from_text(rest))


def sorted_keys(keys: Iterable[StateKey]) -> List[StateKey]:
    return sorted(keys, key=lambda k: k.sort_key)


class ChainPosition(NamedTuple):
    """The point just before tx (height, offset). End of block h is (h + 1, 0)."""
    height: int
    offset: int

    @classmethod
    def after_block(cls, height: int) -> "ChainPosition":
        return cls(height + 1, 0)


END_OF_CHAIN = ChainPosition(2**62, 0)


# ---------------------------------------------------------------------------
# Transactions
# ---------------------------------------------------------------------------

class TxKind(Enum):
    TRANSFER = "transfer"
    CONTRACT_CREATE = "create"
    CONTRACT_CALL = "call"
    OATH_CALL = "oath"


CODE_RUNNING_KINDS = (TxKind.CONTRACT_CALL, TxKind.OATH_CALL)


@dataclass(frozen=True)
class Transaction:
    sender: AccountId
    nonce: int
    kind: TxKind
    recipient: AccountId
    value: int
    gas_limit: int
    gas_price: int
    payload: str
    declared_write_set: FrozenSet[StateKey]
    signature: str = ""
    tx_id: str = ""

    # -- canonical views ---------------------------------------------------
    def seed_dict(self) -> Dict[str, Any]:
        """All fields except the write set, signature and id"""
        return {
            "sender": str(self.sender),
            "nonce": self.nonce,
            "kind": self.kind.value,
            "recipient": str(self.recipient),
            "value": self.value,
            "gas_limit": self.gas_limit,
            "gas_price": self.gas_price,
            "payload": self.payload,
        }

    def body_dict(self) -> Dict[str, Any]:
        body = self.seed_dict()
        body["declared_write_set"] = [str(k) for k in sorted_keys(self.declared_write_set)]
        return body

    def signing_bytes(self) -> bytes:
        return canonical_json(self.body_dict())

    def compute_id(self) -> str:
        body = self.body_dict()
        body["signature"] = self.signature
        return sha256_hex(canonical_json(body))

    @property
    def seed(self) -> bytes:
        """Deterministic per-tx seed, independent of the write set"""
        return hashlib.sha256(b"seed" + canonical_json(self.seed_dict())).digest()

    def to_dict(self) -> Dict[str, Any]:
        body = self.body_dict()
        body["signature"] = self.signature
        body["tx_id"] = self.tx_id
        return body

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Transaction":
        return cls(
            sender=AccountId.from_text(data["sender"]),
            nonce=int(data["nonce"]),
            kind=TxKind(data["kind"]),
            recipient=AccountId.from_text(data["recipient"]),
            value=int(data["value"]),
            gas_limit=int(data["gas_limit"]),
            gas_price=int(data["gas_price"]),
            payload=data.get("payload", ""),
            declared_write_set=frozenset(StateKey.from_text(k) for k in data["declared_write_set"]),
            signature=data.get("signature", ""),
            tx_id=data.get("tx_id", ""),
        )

    # -- derived facts -----------------------------------------------------
    @property
    def reservation(self) -> int:
        return tok_mul(self.gas_limit, self.gas_price)

    @property
    def total_expense(self) -> int:
        """Definition of expense: carried value plus the full fee reservation"""
        return tok_add(self.value, self.reservation)

    def touched_keys(self) -> FrozenSet[StateKey]:
        keys = set(self.declared_write_set)
        keys.add(StateKey.balance(self.sender))
        keys.add(StateKey.balance(self.recipient))
        keys.add(StateKey.nonce(self.sender))
        if self.kind == TxKind.CONTRACT_CREATE:
            keys.add(StateKey.code(self.recipient))
        return frozenset(keys)

    def short(self) -> str:
        return f"{self.kind.value}#{self.tx_id[:10]} {self.sender.short}->{self.recipient.short} v={self.value}"


class Keyring:
    """
    Simulated signatures: HMAC-SHA256 with a per-account secret derived from a
    master seed held by the scenario runner.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._master = hashlib.sha256(f"anh-keyring:{seed}".encode("utf-8")).digest()
        self._secrets: Dict[AccountId, bytes] = {}

    def _secret(self, account: AccountId) -> bytes:
        secret = self._secrets.get(account)
        if secret is None:
            h = hmac.HMAC(self._master, hashes.SHA256())
            h.update(account.id)
            secret = h.finalize()
            self._secrets[account] = secret
        return secret

    def sign(self, account: AccountId, message: bytes) -> str:
        h = hmac.HMAC(self._secret(account), hashes.SHA256())
        h.update(message)
        return h.finalize().hex()

    def verify(self, account: AccountId, message: bytes, signature: str) -> bool:
        try:
            raw = bytes.fromhex(signature)
        except ValueError:
            return False
        h = hmac.HMAC(self._secret(account), hashes.SHA256())
        h.update(message)
        try:
            h.verify(raw)
            return True
        except InvalidSignature:
            return False

    def fresh_account(self, label: str) -> AccountId:
        """A brand-new user account nobody has funded (one key pair per label)"""
        digest = hashlib.sha256(f"fresh:{self.seed}:{label}".encode("utf-8")).digest()
        return AccountId(digest, AccountKind.USER)


def sign_tx(tx: Transaction, keyring: Keyring) -> Transaction:
    """Return a copy of tx with signature and tx_id filled in"""
    signed = replace(tx, signature=keyring.sign(tx.sender, tx.signing_bytes()), tx_id="")
    return replace(signed, tx_id=signed.compute_id())


def make_tx(
    keyring: Keyring,
    sender: AccountId,
    nonce: int,
    kind: TxKind,
    recipient: AccountId,
    value: int = 0,
    gas_limit: int = 0,
    gas_price: int = 1,
    payload: str = "",
    writes: Optional[Iterable[StateKey]] = None,
) -> Transaction:
    """Build and sign a transaction. Sender and recipient balances are always declared."""
    declared = set(writes or ())
    declared.add(StateKey.balance(sender))
    declared.add(StateKey.balance(recipient))
    unsigned = Transaction(
        sender=sender,
        nonce=nonce,
        kind=kind,
        recipient=recipient,
        value=value,
        gas_limit=gas_limit,
        gas_price=gas_price,
        payload=payload,
        declared_write_set=frozenset(declared),
    )
    return sign_tx(unsigned, keyring)
