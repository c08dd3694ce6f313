#!/usr/bin/env python3
"""
ANH scenario runner

A scenario is one JSON document:

    {
      "seed": 7,
      "accounts": {"alice": "user", "carol": "user"},
      "genesis": {"carol": 10000},
      "gas_table": {"intrinsic": {"transfer": 1000}},
      "contracts": {"y": {"creator": "carol", "code": "PUSH 5\\nTRANSFER @alice\\nHALT"}},
      "blocks": [
        [{"op": "create", "contract": "y", "value": 100, "label": "deploy_y"}],
        [{"op": "call", "from": "carol", "to": "y", "label": "tx_ya"}]
      ],
      "queries": [{"op": "income_cost", "account": "alice", "tx": "tx_ya"}]
    }

Names resolve to accounts everywhere ("alice" or "@alice"); contract
addresses come from the creator and the scripted nonce. Call write sets are
inferred from the target's code when not given. Each block is filtered
through admission; rejected txs are reported, the rest sealed.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from anh_accounting import (
    audit_oath,
    deploy_oath,
    discover_incomes,
    evaluate_income,
    maq_answer,
    oath_claim,
    pay_verify,
    read_claim,
)
from anh_errors import AnhError, AssemblyError, GenesisError, InternalInvariantViolation, ScenarioError
from anh_executor import ClosureBuilder, chain_end, execute_closure, observe
from anh_harness import oracle_diff
from anh_ledger import Ledger
from anh_log import get_logger
from anh_query import Query, parse_position
from anh_txindex import InvertedIndex, TxLocator, build_index
from anh_types import (
    AccountId,
    AccountKind,
    ChainPosition,
    Keyring,
    StateKey,
    Transaction,
    TxKind,
    canonical_json,
    make_tx,
)
from anh_vm import GasTable, assemble, encode_call_args, format_program, storage_footprint

logger = get_logger(__name__)

DEFAULT_CALL_GAS = 10_000
TX_OPS = ("transfer", "create", "call", "oath_deploy", "oath_claim")
QUERY_OPS = ("observe", "maq", "pay", "income_cost", "incomes", "audit", "read_claim", "receipt", "zero_cost", "expenses")


@dataclass
class TxSpec:
    path: str
    op: str
    sender: AccountId
    nonce: int
    body: Dict[str, Any]
    label: str
    contract: Optional[AccountId] = None


@dataclass
class Scenario:
    seed: int
    accounts: Dict[str, AccountId]
    genesis: Dict[AccountId, int]
    gas_override: Dict[str, Any]
    contracts: Dict[str, Dict[str, Any]]
    blocks: List[List[TxSpec]]
    queries: List[Dict[str, Any]]
    source: str = "<memory>"

    def resolve(self, ref: str) -> AccountId:
        name = ref[1:] if ref.startswith("@") else ref
        if name in self.accounts:
            return self.accounts[name]
        try:
            return AccountId.from_text(ref)
        except ValueError:
            raise KeyError(ref)

    def name_of(self, account: AccountId) -> str:
        for name, acct in self.accounts.items():
            if acct == account:
                return name
        return str(account)


@dataclass
class ScenarioRun:
    scenario: Scenario
    keyring: Keyring
    gas: GasTable
    ledger: Ledger
    index: InvertedIndex
    labels: Dict[str, str] = field(default_factory=dict)
    block_reports: List[Dict[str, Any]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _account_for(name: str, kind_text: str, path: str) -> AccountId:
    try:
        kind = AccountKind(kind_text)
    except ValueError:
        raise ScenarioError(f"{path}: unknown account kind '{kind_text}'")
    if kind != AccountKind.USER:
        raise ScenarioError(f"{path}: only user accounts are declared; contracts come from 'contracts'")
    return AccountId.from_name(name, kind)


def load_scenario(source: Union[str, Path, Dict[str, Any]], seed: Optional[int] = None) -> Scenario:
    """
    Parse and validate a scenario file (or an already-decoded document).

    Raises:
        ScenarioError: with line/column for JSON syntax errors, with the
                       document path for schema errors
    """
    origin = "<memory>"
    if isinstance(source, dict):
        doc = source
    else:
        origin = str(source)
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as e:
            raise ScenarioError(f"cannot read scenario {origin}: {e}")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{origin}: {e.msg}", e.lineno, e.colno)
    if not isinstance(doc, dict):
        raise ScenarioError(f"{origin}: scenario must be a JSON object")

    accounts: Dict[str, AccountId] = {}
    for name, kind in (doc.get("accounts") or {}).items():
        accounts[name] = _account_for(name, kind, f"accounts.{name}")

    genesis: Dict[AccountId, int] = {}
    for name, amount in (doc.get("genesis") or {}).items():
        if name not in accounts:
            accounts[name] = AccountId.from_name(name)
        if not isinstance(amount, int) or isinstance(amount, bool) or amount < 0:
            raise ScenarioError(f"genesis.{name}: allocation must be a non-negative integer")
        if amount:
            genesis[accounts[name]] = amount

    contracts = doc.get("contracts") or {}
    for name, spec in contracts.items():
        if name in accounts:
            raise ScenarioError(f"contracts.{name}: name already used by an account")
        if not isinstance(spec, dict) or "code" not in spec or "creator" not in spec:
            raise ScenarioError(f"contracts.{name}: needs 'creator' and 'code'")
        if spec["creator"] not in accounts:
            raise ScenarioError(f"contracts.{name}.creator: unknown account '{spec['creator']}'")

    scenario = Scenario(
        seed=int(doc.get("seed", 0)) if seed is None else seed,
        accounts=accounts,
        genesis=genesis,
        gas_override=doc.get("gas_table") or {},
        contracts=contracts,
        blocks=[],
        queries=list(doc.get("queries") or []),
        source=origin,
    )
    scenario.blocks = _schedule(doc.get("blocks") or [], scenario)
    for i, query in enumerate(scenario.queries):
        if not isinstance(query, dict) or query.get("op") not in QUERY_OPS:
            raise ScenarioError(f"queries[{i}]: op must be one of {', '.join(QUERY_OPS)}")
    return scenario


def _schedule(blocks: List[Any], scenario: Scenario) -> List[List[TxSpec]]:
    """First pass: nonces, labels and contract addresses in script order"""
    nonces: Dict[AccountId, int] = {}
    labels: set = set()
    out: List[List[TxSpec]] = []
    for h, block in enumerate(blocks, 1):
        if not isinstance(block, list):
            raise ScenarioError(f"blocks[{h - 1}]: a block is a list of transactions")
        specs: List[TxSpec] = []
        for t, body in enumerate(block):
            path = f"blocks[{h - 1}][{t}]"
            if not isinstance(body, dict) or body.get("op") not in TX_OPS:
                raise ScenarioError(f"{path}: op must be one of {', '.join(TX_OPS)}")
            for r in range(int(body.get("repeat", 1))):
                specs.append(_spec(body, path, scenario, nonces, labels, r))
        out.append(specs)
    return out


def _spec(body: Dict[str, Any], path: str, scenario: Scenario, nonces: Dict[AccountId, int], labels: set, repeat: int) -> TxSpec:
    op = body["op"]
    contract_name = body.get("contract")
    if op == "create":
        if contract_name not in scenario.contracts:
            raise ScenarioError(f"{path}.contract: unknown contract '{contract_name}'")
        sender_name = scenario.contracts[contract_name]["creator"]
    else:
        sender_name = body.get("from")
    if sender_name not in scenario.accounts or not scenario.accounts[sender_name].is_user:
        raise ScenarioError(f"{path}.from: unknown account '{sender_name}'")
    sender = scenario.accounts[sender_name]

    nonce = int(body["nonce"]) if "nonce" in body else nonces.get(sender, 0)
    nonces[sender] = max(nonces.get(sender, 0), nonce + 1)

    label = body.get("label") or f"{path}"
    if repeat:
        label = f"{label}#{repeat}"
    if label in labels:
        raise ScenarioError(f"{path}.label: duplicate label '{label}'")
    labels.add(label)

    contract = None
    if op in ("create", "oath_deploy"):
        name = contract_name if op == "create" else body.get("contract")
        if not name:
            raise ScenarioError(f"{path}.contract: a name for the new contract is required")
        if name in scenario.accounts and scenario.accounts[name].kind != AccountKind.CONTRACT:
            raise ScenarioError(f"{path}.contract: name '{name}' already used by an account")
        contract = AccountId.contract_address(sender, nonce)
        scenario.accounts[name] = contract
    return TxSpec(path, op, sender, nonce, body, label, contract)


# ---------------------------------------------------------------------------
# Building and sealing
# ---------------------------------------------------------------------------

def _resolve_or_fail(scenario: Scenario, ref: Any, path: str) -> AccountId:
    if not isinstance(ref, str):
        raise ScenarioError(f"{path}: account reference must be a string")
    try:
        return scenario.resolve(ref)
    except KeyError:
        raise ScenarioError(f"{path}: unknown account '{ref}'")


def _parse_key(scenario: Scenario, text: str, path: str) -> StateKey:
    """'balance:@alice', 'storage:@y:slot' or any canonical key text"""
    parts = text.split(":")
    if len(parts) >= 2 and parts[1].startswith("@"):
        account = _resolve_or_fail(scenario, parts[1], path)
        if parts[0] == "balance":
            return StateKey.balance(account)
        if parts[0] == "storage" and len(parts) == 3:
            return StateKey.storage(account, parts[2])
        raise ScenarioError(f"{path}: bad key '{text}'")
    try:
        return StateKey.from_text(text)
    except (ValueError, KeyError) as e:
        raise ScenarioError(f"{path}: bad key '{text}': {e}")


def _program_of(scenario: Scenario, contract: AccountId, path: str):
    for name, spec in scenario.contracts.items():
        if scenario.accounts.get(name) == contract:
            try:
                return assemble(spec["code"], scenario.resolve)
            except AssemblyError as e:
                raise ScenarioError(f"contracts.{name}.code: {e}")
    return None


def build_tx(spec: TxSpec, scenario: Scenario, keyring: Keyring, gas: GasTable) -> Transaction:
    body = spec.body
    path = spec.path
    gas_price = int(body.get("gas_price", 1))
    writes = [_parse_key(scenario, k, f"{path}.writes") for k in body.get("writes", [])]

    if spec.op == "transfer":
        recipient = _resolve_or_fail(scenario, body.get("to"), f"{path}.to")
        return make_tx(
            keyring, spec.sender, spec.nonce, TxKind.TRANSFER, recipient,
            value=int(body.get("value", 0)), gas_limit=int(body.get("gas_limit", gas.intrinsic_gas(TxKind.TRANSFER))),
            gas_price=gas_price, writes=writes,
        )

    if spec.op == "create":
        name = body["contract"]
        try:
            program = assemble(scenario.contracts[name]["code"], scenario.resolve)
        except AssemblyError as e:
            raise ScenarioError(f"contracts.{name}.code: {e}")
        value = int(body.get("value", scenario.contracts[name].get("value", 0)))
        return make_tx(
            keyring, spec.sender, spec.nonce, TxKind.CONTRACT_CREATE, spec.contract,
            value=value, gas_limit=int(body.get("gas_limit", gas.intrinsic_gas(TxKind.CONTRACT_CREATE))),
            gas_price=gas_price, payload=format_program(program), writes=writes,
        )

    if spec.op == "call":
        contract = _resolve_or_fail(scenario, body.get("to"), f"{path}.to")
        args: List[Union[int, AccountId]] = []
        for i, arg in enumerate(body.get("args", [])):
            args.append(arg if isinstance(arg, int) else _resolve_or_fail(scenario, arg, f"{path}.args[{i}]"))
        inferred = set(writes)
        program = _program_of(scenario, contract, path)
        if program is not None and "writes" not in body:
            inferred.update(storage_footprint(program, contract))
        inferred.update(StateKey.balance(a) for a in args if isinstance(a, AccountId))
        limit = int(body.get("gas_limit", gas.intrinsic_gas(TxKind.CONTRACT_CALL) + DEFAULT_CALL_GAS))
        return make_tx(
            keyring, spec.sender, spec.nonce, TxKind.CONTRACT_CALL, contract,
            value=int(body.get("value", 0)), gas_limit=limit, gas_price=gas_price,
            payload=encode_call_args(args) if args else "", writes=inferred,
        )

    if spec.op == "oath_deploy":
        tx, _ = deploy_oath(keyring, spec.sender, spec.nonce, int(body.get("deposit", 0)), gas)
        return tx

    contract = _resolve_or_fail(scenario, body.get("to"), f"{path}.to")
    try:
        query = Query.from_dict(
            body["query"],
            account_resolver=lambda ref: _resolve_or_fail(scenario, ref, f"{path}.query"),
            position_resolver=parse_position,
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ScenarioError(f"{path}.query: {e}")
    return oath_claim(
        keyring, spec.sender, contract, spec.nonce, query, body.get("result"), int(body.get("penalty", 0)), gas,
    )


def seal_scenario(scenario: Scenario, gas_table: Optional[str] = None) -> ScenarioRun:
    """Genesis, then each scripted block through admission and sealing"""
    gas = GasTable.load(gas_table, scenario.gas_override)
    keyring = Keyring(scenario.seed)
    try:
        ledger = Ledger.genesis(scenario.genesis, keyring, gas)
    except GenesisError as e:
        raise ScenarioError(f"genesis: {e}")
    run = ScenarioRun(scenario, keyring, gas, ledger, InvertedIndex())
    run.block_reports.append({"height": 0, "hash": ledger.tip_hash, "sealed": [], "rejected": []})

    for specs in scenario.blocks:
        txs = [build_tx(spec, scenario, keyring, gas) for spec in specs]
        label_of = {tx.tx_id: spec.label for tx, spec in zip(txs, specs)}
        kept, rejected = ledger.filter_admissible(txs)
        block = ledger.seal_block(kept)
        for tx in kept:
            run.labels[label_of[tx.tx_id]] = tx.tx_id
        run.block_reports.append({
            "height": block.height,
            "hash": block.block_hash,
            "sealed": [label_of[tx.tx_id] for tx in kept],
            "rejected": [{"tx": label_of[tx.tx_id], "reason": reason.value} for tx, reason in rejected],
        })
    run.index = build_index(ledger.blocks)
    logger.info(f"Sealed {ledger.height} blocks, {ledger.tx_count} txs from {scenario.source}")
    return run


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def _tx_id(run: ScenarioRun, ref: Any, path: str) -> str:
    if not isinstance(ref, str):
        raise ScenarioError(f"{path}: tx reference must be a label or tx id")
    if ref in run.labels:
        return run.labels[ref]
    if run.ledger.locate(ref) is not None:
        return ref
    raise ScenarioError(f"{path}: unknown or unsealed tx '{ref}'")


def _position(run: ScenarioRun, value: Any, path: str) -> Optional[ChainPosition]:
    """'end', {"block": h}, {"before": label} or [height, offset]"""
    if isinstance(value, dict) and "block" in value:
        return ChainPosition.after_block(int(value["block"]))
    if isinstance(value, dict) and "before" in value:
        return run.ledger.locate(_tx_id(run, value["before"], path))
    try:
        return parse_position(value)
    except ValueError as e:
        raise ScenarioError(f"{path}: {e}")


def parse_query(run: ScenarioRun, data: Any, path: str) -> Query:
    scenario = run.scenario
    try:
        return Query.from_dict(
            data,
            account_resolver=lambda ref: _resolve_or_fail(scenario, ref, path),
            position_resolver=lambda value: _position(run, value, path),
            tx_resolver=lambda ref: _tx_id(run, ref, path),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ScenarioError(f"{path}: bad query: {e}")


def _account(run: ScenarioRun, item: Dict[str, Any], path: str) -> AccountId:
    return _resolve_or_fail(run.scenario, item.get("account"), f"{path}.account")


def _theta(run: ScenarioRun, item: Dict[str, Any], path: str) -> Optional[List[str]]:
    if "theta" not in item:
        return None
    return [_tx_id(run, ref, f"{path}.theta") for ref in item["theta"]]


def run_query(run: ScenarioRun, item: Dict[str, Any], path: str) -> Dict[str, Any]:
    """One scripted query; the result echoes the op and label for the report"""
    op = item["op"]
    ledger, index = run.ledger, run.index
    out: Dict[str, Any] = {"op": op}
    if "label" in item:
        out["label"] = item["label"]

    if op == "observe":
        out.update(observe(parse_query(run, item["query"], path), ledger, index, budget=item.get("budget")).to_dict())
    elif op == "maq":
        query = parse_query(run, item["query"], path)
        out.update(maq_answer(query, ledger, index, theta=_theta(run, item, path), budget=item.get("budget")).to_dict())
    elif op == "pay":
        tx_id = _tx_id(run, item.get("tx"), f"{path}.tx")
        out.update(pay_verify(tx_id, _theta(run, item, path) or [], ledger, index).to_dict())
    elif op == "income_cost":
        account = _account(run, item, path)
        record, closure_run = evaluate_income(_tx_id(run, item.get("tx"), f"{path}.tx"), account, ledger, index)
        out["income"] = None if record is None else record.to_dict()
        out["income_cost"] = 0 if record is None else record.income_cost
        out["txs_executed"] = closure_run.txs_executed
        out["gas_executed"] = closure_run.gas_executed
    elif op == "incomes":
        account = _account(run, item, path)
        upto = _position(run, item.get("at", "end"), f"{path}.at")
        records = discover_incomes(account, ledger, index, upto=upto, with_costs=item.get("with_costs", True))
        out["incomes"] = [r.to_dict() for r in records]
    elif op == "audit":
        out.update(audit_oath(_tx_id(run, item.get("tx"), f"{path}.tx"), ledger, index).to_dict())
    elif op == "read_claim":
        tx = ledger.get_tx(_tx_id(run, item.get("tx"), f"{path}.tx"))
        try:
            claim = read_claim(tx)
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise ScenarioError(f"{path}: tx does not carry an oath claim: {e}")
        out.update({"query": claim.query.to_dict(), "result": claim.result, "penalty": claim.penalty, "gas_executed": 0})
    elif op == "receipt":
        tx_id = _tx_id(run, item.get("tx"), f"{path}.tx")
        out.update(observe_receipt(run, tx_id))
    elif op == "zero_cost":
        account = _account(run, item, path)
        at = _position(run, item.get("at", "end"), f"{path}.at") or chain_end(ledger)
        out["zero_cost_balance"] = ledger.zero_cost.balance_at(account, at)
    elif op == "expenses":
        account = _account(run, item, path)
        out["total_expenses"] = index.total_expenses(account, _position(run, item.get("at", "end"), f"{path}.at"))
    return out


def observe_receipt(run: ScenarioRun, tx_id: str) -> Dict[str, Any]:
    """Canonical receipt of one tx, from its closure"""
    position = run.ledger.locate(tx_id)
    builder = ClosureBuilder(run.ledger, run.index)
    builder.demand_tx(TxLocator(position.height, position.offset, tx_id))
    closure_run = execute_closure(builder.build(), run.ledger)
    out = closure_run.receipts[tx_id].to_dict()
    out["txs_executed"] = closure_run.txs_executed
    out["gas_executed"] = closure_run.gas_executed
    return out


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    seed: int
    gas_table_digest: str
    accounts: Dict[str, str]
    labels: Dict[str, str]
    blocks: List[Dict[str, Any]]
    results: List[Dict[str, Any]]
    oracle: Optional[Dict[str, Any]] = None
    errors: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def oracle_clean(self) -> bool:
        if self.oracle is None:
            return True
        return not self.oracle.get("diffs") and not self.oracle.get("zero_cost_violations")

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "seed": self.seed,
            "gas_table_digest": self.gas_table_digest,
            "accounts": self.accounts,
            "labels": self.labels,
            "blocks": self.blocks,
            "results": self.results,
            "errors": self.errors,
        }
        if self.oracle is not None:
            out["oracle"] = self.oracle
        return out

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())


def run_scenario(
    scenario: Scenario,
    gas_table: Optional[str] = None,
    oracle: bool = False,
    jobs: int = 1,
    on_sealed: Optional[Callable[[ScenarioRun], None]] = None,
) -> Tuple[RunReport, ScenarioRun]:
    """
    Seal, query, and optionally diff against full replay.

    Query failures that are the scenario's fault (unknown tx, infeasible Θ,
    budget exceeded) are reported per query; internal invariant violations
    propagate.
    """
    run = seal_scenario(scenario, gas_table)
    if on_sealed is not None:
        on_sealed(run)

    def one(i_item: Tuple[int, Dict[str, Any]]) -> Dict[str, Any]:
        i, item = i_item
        try:
            return run_query(run, item, f"queries[{i}]")
        except InternalInvariantViolation:
            raise
        except AnhError as e:
            return {"op": item.get("op"), "error": type(e).__name__, "message": str(e)}

    items = list(enumerate(scenario.queries))
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]

    report = RunReport(
        seed=scenario.seed,
        gas_table_digest=run.gas.digest(),
        accounts={name: str(acct) for name, acct in sorted(scenario.accounts.items())},
        labels=dict(sorted(run.labels.items())),
        blocks=run.block_reports,
        results=results,
    )
    report.errors = [{"query": i, "error": r["error"]} for i, r in enumerate(results) if "error" in r]
    if oracle:
        report.oracle = oracle_diff(run.ledger, run.index)
    return report, run
