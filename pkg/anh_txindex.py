#!/usr/bin/env python3
"""
ANH transaction index

Inverted files over the chain, the way a search engine indexes pages:
by_sender maps an account to the txs it sent, by_key maps a state key to the
txs that touch it (declared write set plus the implicit balance, nonce and
code keys). Postings are kept in chain order. Expense sums use prefix sums
over by_sender, so total_expenses is a bisect plus a subtraction and never
touches the VM.
"""
from bisect import bisect_left
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Union

from anh_errors import DuplicateBlockError
from anh_log import get_logger
from anh_types import AccountId, ChainPosition, StateKey, sorted_keys

logger = get_logger(__name__)


class TxLocator(NamedTuple):
    height: int
    offset: int
    tx_id: str

    @property
    def position(self) -> ChainPosition:
        return ChainPosition(self.height, self.offset)

    def to_dict(self) -> Dict[str, Any]:
        return {"height": self.height, "offset": self.offset, "tx_id": self.tx_id}


Bound = Union[ChainPosition, TxLocator, None]


def _bound(upto: Bound) -> Optional[ChainPosition]:
    if upto is None:
        return None
    return ChainPosition(upto[0], upto[1])


class _Postings:
    """Chain-ordered locators with a parallel position list for bisecting"""

    __slots__ = ("locators", "positions", "prefix")

    def __init__(self, with_prefix: bool = False):
        self.locators: List[TxLocator] = []
        self.positions: List[ChainPosition] = []
        self.prefix: Optional[List[int]] = [0] if with_prefix else None

    def add(self, locator: TxLocator, amount: int = 0) -> None:
        self.locators.append(locator)
        self.positions.append(locator.position)
        if self.prefix is not None:
            self.prefix.append(self.prefix[-1] + amount)

    def count_before(self, upto: Optional[ChainPosition]) -> int:
        if upto is None:
            return len(self.locators)
        return bisect_left(self.positions, upto)


class InvertedIndex:
    """In-memory postings; rebuilt from the chain on startup"""

    def __init__(self):
        self.by_sender: Dict[AccountId, _Postings] = {}
        self.by_key: Dict[StateKey, _Postings] = {}
        self.block_hashes: Dict[int, str] = {}

    def index_block(self, block) -> "InvertedIndex":
        known = self.block_hashes.get(block.height)
        if known is not None:
            if known == block.block_hash:
                return self
            raise DuplicateBlockError(f"height {block.height} already indexed with a different block")
        for offset, tx in enumerate(block.txs):
            locator = TxLocator(block.height, offset, tx.tx_id)
            self.by_sender.setdefault(tx.sender, _Postings(with_prefix=True)).add(locator, tx.total_expense)
            for key in sorted_keys(tx.touched_keys()):
                self.by_key.setdefault(key, _Postings()).add(locator)
        self.block_hashes[block.height] = block.block_hash
        return self

    def total_expenses(self, account: AccountId, upto: Bound = None) -> int:
        """Σ (value + gas_limit × gas_price) over txs sent by account strictly before upto"""
        postings = self.by_sender.get(account)
        if postings is None:
            return 0
        return postings.prefix[postings.count_before(_bound(upto))]

    def sent_before(self, account: AccountId, upto: Bound = None) -> List[TxLocator]:
        postings = self.by_sender.get(account)
        if postings is None:
            return []
        return postings.locators[: postings.count_before(_bound(upto))]

    def txs_touching(self, key: StateKey, upto: Bound = None) -> List[TxLocator]:
        postings = self.by_key.get(key)
        if postings is None:
            return []
        return postings.locators[: postings.count_before(_bound(upto))]

    def keys_of(self, account: AccountId) -> List[StateKey]:
        return sorted_keys(k for k in self.by_key if k.account == account)

    def dump(self, account: Optional[AccountId] = None, key: Optional[StateKey] = None) -> Dict[str, Any]:
        """JSON view of the postings, optionally restricted to one account or key"""
        senders = {a: p for a, p in self.by_sender.items() if account is None or a == account}
        keys = {
            k: p
            for k, p in self.by_key.items()
            if (key is None or k == key) and (account is None or k.account == account)
        }
        return {
            "by_sender": {
                str(a): [loc.to_dict() for loc in p.locators]
                for a, p in sorted(senders.items(), key=lambda item: item[0].hex)
            },
            "by_key": {str(k): [loc.to_dict() for loc in keys[k].locators] for k in sorted_keys(keys)},
        }


def build_index(blocks: Iterable) -> InvertedIndex:
    index = InvertedIndex()
    count = 0
    for block in blocks:
        index.index_block(block)
        count += 1
    logger.debug(f"Indexed {count} blocks")
    return index
