#!/usr/bin/env python3
"""
ANH simulator command line

  anh-sim run --scenario scenarios/contract_income.json --oracle --report out.json
  anh-sim observe --scenario s.json --query '{"BalanceAtLeast": {"account": "alice", "amount": 10}}'
  anh-sim pay --scenario s.json --from alice --to bob --amount 50 --theta theta.json
  anh-sim attack --kind targeted --count 1000 --burn 5000
  anh-sim audit-oath --scenario scenarios/oath.json --tx claim_false
  anh-sim dump-index --scenario s.json --account alice
  anh-sim verify-chain --chain ./chain --seed 7

JSON results go to stdout, logs to stderr (ANH_LOG=debug|info|warning|error|quiet).

Exit codes: 0 ok, 1 oracle diff or rejected verification, 2 internal
invariant violation, 3 scenario or usage error.
"""
import argparse
import json
import sys
from typing import Any, Dict, List, Optional

from anh_accounting import audit_oath, pay_verify, theta_file
from anh_attacks import AttackConfig, AttackKind, attack_scaling, run_attack
from anh_errors import AnhError, ChainError, InternalInvariantViolation, ScenarioError
from anh_executor import observe
from anh_ledger import Ledger
from anh_log import log, setup_logging
from anh_scenario import ScenarioRun, _resolve_or_fail, _tx_id, load_scenario, parse_query, run_scenario, seal_scenario
from anh_types import AccountId, Keyring, StateKey, TxKind
from anh_vm import GasTable

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVARIANT = 2
EXIT_USAGE = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; 2 is reserved for invariant violations here"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        log(message, "ERROR")
        raise SystemExit(EXIT_USAGE)


def emit(data: Any) -> None:
    print(json.dumps(data, indent=2, sort_keys=True))


def _sealed(args: argparse.Namespace) -> ScenarioRun:
    scenario = load_scenario(args.scenario, seed=args.seed)
    return seal_scenario(scenario, args.gas_table)


def _save_chain(ledger: Ledger, directory: Optional[str]) -> None:
    if directory:
        ledger.save(directory)
        log(f"Chain saved to {directory}", "SUCCESS")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed)
    report, run = run_scenario(scenario, args.gas_table, oracle=args.oracle, jobs=args.jobs)
    data = report.to_json()
    if args.report:
        with open(args.report, "wb") as f:
            f.write(data)
        log(f"Report written to {args.report}", "SUCCESS")
    sys.stdout.write(data.decode("utf-8") + "\n")
    _save_chain(run.ledger, args.save_chain)
    if not report.oracle_clean:
        log(
            f"Oracle diff is not empty: {len(report.oracle['diffs'])} keys differ, "
            f"{len(report.oracle['zero_cost_violations'])} zero-cost violations",
            "ERROR",
        )
        return EXIT_FAILED
    return EXIT_OK


def cmd_observe(args: argparse.Namespace) -> int:
    run = _sealed(args)
    try:
        raw = json.loads(args.query)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"--query: {e.msg}", e.lineno, e.colno)
    query = parse_query(run, raw, "--query")
    emit(observe(query, run.ledger, run.index, budget=args.budget).to_dict())
    return EXIT_OK


def _find_payment(run: ScenarioRun, args: argparse.Namespace) -> str:
    if args.tx:
        return _tx_id(run, args.tx, "--tx")
    if not (args.sender and args.to and args.amount is not None):
        raise ScenarioError("pay needs --tx, or --from, --to and --amount")
    sender = _resolve_or_fail(run.scenario, args.sender, "--from")
    recipient = _resolve_or_fail(run.scenario, args.to, "--to")
    matches = [
        tx.tx_id
        for _, tx in run.ledger.iter_txs()
        if tx.kind == TxKind.TRANSFER and tx.sender == sender and tx.recipient == recipient and tx.value == args.amount
    ]
    if not matches:
        raise ScenarioError(f"no sealed transfer {args.sender} -> {args.to} of {args.amount}")
    return matches[-1]


def cmd_pay(args: argparse.Namespace) -> int:
    run = _sealed(args)
    tx_id = _find_payment(run, args)
    theta: List[str] = []
    if args.theta:
        try:
            refs = theta_file(args.theta)
        except (OSError, ValueError) as e:
            raise ScenarioError(f"--theta: {e}")
        theta = [_tx_id(run, ref, "--theta") for ref in refs]
    decision = pay_verify(tx_id, theta, run.ledger, run.index)
    emit(decision.to_dict())
    return EXIT_OK if decision.accepted else EXIT_FAILED


def cmd_attack(args: argparse.Namespace) -> int:
    try:
        kind = AttackKind.parse(args.kind)
        victim = None
        if kind == AttackKind.TARGETED:
            victim = AccountId.from_text(args.victim) if args.victim else AccountId.from_name(f"victim-{args.seed or 0}")
        config = AttackConfig(kind, args.count, burn=args.burn, victim=victim, q=args.q, seed=args.seed or 0)
    except ValueError as e:
        raise ScenarioError(f"attack: {e}")
    gas = GasTable.load(args.gas_table)
    if args.sizes:
        emit(attack_scaling(kind, args.sizes, burn=args.burn, seed=args.seed or 0, gas=gas))
        return EXIT_OK
    result = run_attack(config, gas)
    _save_chain(result.ledger, args.save_chain)
    out: Dict[str, Any] = result.metrics.to_dict()
    out["accounts"] = {name: str(acct) for name, acct in sorted(result.accounts.items())}
    out["payroll_tx"] = result.payroll_call.tx_id
    out["payment_tx"] = result.payment.tx_id
    out["height"] = result.ledger.height
    emit(out)
    return EXIT_OK


def cmd_audit_oath(args: argparse.Namespace) -> int:
    run = _sealed(args)
    emit(audit_oath(_tx_id(run, args.tx, "--tx"), run.ledger, run.index).to_dict())
    return EXIT_OK


def cmd_dump_index(args: argparse.Namespace) -> int:
    run = _sealed(args)
    account = None
    key = None
    try:
        if args.account:
            account = run.scenario.resolve(args.account)
        if args.key:
            key = StateKey.from_text(args.key)
    except (KeyError, ValueError) as e:
        raise ScenarioError(f"unknown account or key: {e}")
    data = run.index.dump(account, key)
    if account is not None:
        data["total_expenses"] = run.index.total_expenses(account)
    emit(data)
    return EXIT_OK


def cmd_verify_chain(args: argparse.Namespace) -> int:
    gas = GasTable.load(args.gas_table)
    try:
        ledger = Ledger.load(args.chain, Keyring(args.seed or 0), gas)
    except ChainError as e:
        log(f"Chain verification failed: {e}", "ERROR")
        emit({"ok": False, "error": str(e)})
        return EXIT_FAILED
    emit({"ok": True, "height": ledger.height, "tip": ledger.tip_hash, "txs": ledger.tx_count})
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "observe": cmd_observe,
    "pay": cmd_pay,
    "attack": cmd_attack,
    "audit-oath": cmd_audit_oath,
    "dump-index": cmd_dump_index,
    "verify-chain": cmd_verify_chain,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Override the scenario seed (u64)")
    common.add_argument("--gas-table", dest="gas_table", help="Gas table JSON path")
    common.add_argument("--log-file", dest="log_file", help="Append plain log lines to this file")

    with_scenario = argparse.ArgumentParser(add_help=False, parents=[common])
    with_scenario.add_argument("--scenario", required=True, help="Scenario JSON file")

    parser = _Parser(description="ANH lazy-execution ledger simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[with_scenario], help="Run a scenario and print its report")
    p_run.add_argument("--oracle", action="store_true", help="Diff every lazy answer against full replay")
    p_run.add_argument("--report", help="Also write the report to this file")
    p_run.add_argument("--save-chain", dest="save_chain", help="Save sealed blocks to this directory")
    p_run.add_argument("--jobs", type=int, default=1, help="Parallel read-only queries")

    p_observe = sub.add_parser("observe", parents=[with_scenario], help="Answer one query lazily")
    p_observe.add_argument("--query", required=True, help='Query JSON, e.g. {"ExactBalance": {"account": "alice"}}')
    p_observe.add_argument("--budget", type=int, help="Gas budget for closure execution")

    p_pay = sub.add_parser("pay", parents=[with_scenario], help="Verify a payment against a Θ file")
    p_pay.add_argument("--tx", help="Label or id of the payment")
    p_pay.add_argument("--from", dest="sender", help="Payer name")
    p_pay.add_argument("--to", help="Payee name")
    p_pay.add_argument("--amount", type=int, help="Payment value")
    p_pay.add_argument("--theta", help="JSON list of income tx ids or labels")

    p_attack = sub.add_parser("attack", parents=[common], help="Run a DoS attack and print its metrics")
    p_attack.add_argument("--kind", required=True, help="TxDoS, ExecDoS or TargetedExecDoS")
    p_attack.add_argument("--count", type=int, default=100)
    p_attack.add_argument("--burn", type=int, default=5000)
    p_attack.add_argument("--victim", help="Victim account id (targeted only)")
    p_attack.add_argument("--q", type=int, default=1, help="Payout per targeted call")
    p_attack.add_argument("--sizes", type=int, nargs="+", help="Run at several flood sizes and fit growth")
    p_attack.add_argument("--save-chain", dest="save_chain", help="Save sealed blocks to this directory")

    p_audit = sub.add_parser("audit-oath", parents=[with_scenario], help="Audit one oath claim")
    p_audit.add_argument("--tx", required=True, help="Label or id of the claim")

    p_dump = sub.add_parser("dump-index", parents=[with_scenario], help="Print index postings")
    p_dump.add_argument("--account", help="Restrict to one account")
    p_dump.add_argument("--key", help="Restrict to one state key")

    p_verify = sub.add_parser("verify-chain", parents=[common], help="Reload and re-validate a saved chain")
    p_verify.add_argument("--chain", required=True, help="Directory of block_*.json files")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(log_file=args.log_file)
    try:
        return COMMANDS[args.command](args)
    except InternalInvariantViolation as e:
        log(f"Internal invariant violation: {e}", "ERROR")
        return EXIT_INVARIANT
    except ScenarioError as e:
        log(f"Scenario error: {e}", "ERROR")
        return EXIT_USAGE
    except AnhError as e:
        log(f"{type(e).__name__}: {e}", "ERROR")
        return EXIT_USAGE
    except ValueError as e:
        log(f"Unexpected ValueError: {e}", "ERROR")
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
