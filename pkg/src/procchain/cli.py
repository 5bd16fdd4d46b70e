"""Command-line front end. Every subcommand is a thin adapter over the library.

Exit codes (stable; scripts may branch on them):

    0  OK / COMMITTED / ledger intact / experiment passed
    1  experiment ran but a valid request failed or an invalid one committed
    2  usage error (bad flags)
    3  UNKNOWN_IDENTITY
    4  UNKNOWN_ASSET
    5  ACL_DENIED
    6  GUARD_FALSE
    7  ALREADY_PERFORMED
    8  ASSET_CLOSED
    9  DUPLICATE_ASSET_ID (also duplicate participant id)
    10 MALFORMED (request or definition)
    11 NOT_VISIBLE (order missing or not readable by the identity)
    12 LEDGER_INVALID (verification failed or replay disagrees)
    13 LEDGER_IO (ledger missing, unreadable, malformed or already present)
    14 LOCKED (another invocation holds the ledger)
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import os
import sys
from enum import IntEnum
from pathlib import Path

from . import ledger
from .acl import policy_for_definition
from .engine import Engine, NotVisibleError, UnknownIdentityError
from .harness import ConfigError, ExperimentConfig, exit_status, render_report, run_experiment
from .model import ADMIN_ID, DeployRequest, NewAsset, Participant, Reason, TransactionRequest
from .process import (
    DefinitionError,
    ProcessDefinition,
    ProcessSyntaxError,
    builtin_order_processing,
    parse_process_definition,
)

LEDGER_ENV = "PROCCHAIN_LEDGER"
DEFAULT_LEDGER = "procchain.ledger"


class Exit(IntEnum):
    OK = 0
    FAILED = 1
    USAGE = 2
    UNKNOWN_IDENTITY = 3
    UNKNOWN_ASSET = 4
    ACL_DENIED = 5
    GUARD_FALSE = 6
    ALREADY_PERFORMED = 7
    ASSET_CLOSED = 8
    DUPLICATE_ASSET_ID = 9
    MALFORMED = 10
    NOT_VISIBLE = 11
    LEDGER_INVALID = 12
    LEDGER_IO = 13
    LOCKED = 14


REASON_EXIT = {reason: Exit[reason.value] for reason in Reason}


class CliError(Exception):
    def __init__(self, message: str, code: Exit):
        super().__init__(message)
        self.code = code


def _dump(obj) -> str:
    return ledger.canonical(obj).decode("utf-8")


# --- network plumbing ------------------------------------------------------


@contextlib.contextmanager
def _locked(path: Path):
    """Advisory exclusive lock held for one writing invocation."""
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "a") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise CliError(f"ledger {path} is locked by another invocation", Exit.LOCKED) from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _load_chain(path: Path) -> ledger.Chain:
    try:
        return ledger.load(path)
    except FileNotFoundError:
        raise CliError(f"no ledger at {path}; run 'network init' first", Exit.LEDGER_IO) from None
    except (OSError, ledger.LedgerFormatError) as exc:
        raise CliError(f"cannot read ledger {path}: {exc}", Exit.LEDGER_IO) from None


def deployed_definition(chain: ledger.Chain) -> ProcessDefinition:
    for rec in chain.records():
        if isinstance(rec.request, DeployRequest) and rec.committed:
            return parse_process_definition(rec.request.definition)
    raise CliError("ledger carries no deployed definition", Exit.LEDGER_INVALID)


def open_network(path: Path) -> Engine:
    chain = _load_chain(path)
    bad = ledger.verify_chain(chain)
    if bad:
        raise CliError(f"ledger failed verification: {bad}", Exit.LEDGER_INVALID)
    defn = deployed_definition(chain)
    try:
        return Engine.from_chain(chain, defn, policy_for_definition(defn))
    except ledger.ReplayError as exc:
        raise CliError(f"ledger replay failed: {exc}", Exit.LEDGER_INVALID) from None


def _save(engine: Engine, path: Path) -> None:
    ledger.persist(engine.seal(), path)


def _outcome_exit(outcome) -> Exit:
    return Exit.OK if outcome.committed else REASON_EXIT[outcome.reason]


# --- subcommands -----------------------------------------------------------


def cmd_network_init(args) -> int:
    path = Path(args.ledger)
    if args.definition:
        try:
            defn = parse_process_definition(Path(args.definition).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read definition: {exc}", Exit.LEDGER_IO) from None
        except (ProcessSyntaxError, DefinitionError) as exc:
            raise CliError(f"invalid definition: {exc}", Exit.MALFORMED) from None
    else:
        defn = builtin_order_processing()
    with _locked(path):
        if path.exists():
            raise CliError(f"ledger {path} already exists", Exit.LEDGER_IO)
        engine = Engine(defn)
        outcome = engine.deploy()
        _save(engine, path)
    print(f"initialized {path}: process {defn.name} deployed ({outcome})")
    return Exit.OK


def cmd_participant_add(args) -> int:
    path = Path(args.ledger)
    p = Participant(args.id, args.role, args.first_name, args.last_name, args.company, args.position)
    with _locked(path):
        engine = open_network(path)
        outcome = engine.register_participant(p, args.invoker)
        _save(engine, path)
    print(outcome)
    return _outcome_exit(outcome)


def _parse_new_order(text: str) -> NewAsset:
    fields = {}
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CliError(f"--new-order expects key=value pairs, got {item!r}", Exit.USAGE)
        fields[key.strip()] = value.strip()
    if "id" not in fields:
        raise CliError("--new-order needs id=...", Exit.USAGE)
    asset_id = fields.pop("id")
    name = fields.pop("name", "")
    description = fields.pop("description", "")
    return NewAsset(asset_id, fields, name, description)


def cmd_tx_submit(args) -> int:
    path = Path(args.ledger)
    with _locked(path):
        engine = open_network(path)
        new_asset = _parse_new_order(args.new_order) if args.new_order else None
        req = TransactionRequest(args.name, args.invoker, engine.next_nonce, args.order, new_asset)
        outcome = engine.submit(req)
        _save(engine, path)
    if args.json:
        print(_dump(engine.records[-1].to_dict()))
    else:
        print(outcome)
    return _outcome_exit(outcome)


def _scoped(args):
    engine = open_network(Path(args.ledger))
    try:
        return engine, engine.query_asset(args.invoker, args.order)
    except UnknownIdentityError as exc:
        raise CliError(str(exc), Exit.UNKNOWN_IDENTITY) from None
    except NotVisibleError:
        raise CliError(f"order {args.order} is not visible to {args.invoker}", Exit.NOT_VISIBLE) from None


def cmd_order_show(args) -> int:
    _, asset = _scoped(args)
    record = asset.to_dict()
    if args.json:
        print(_dump(record))
    else:
        for key, value in record.items():
            if isinstance(value, list):
                value = ",".join(value) or "-"
            elif isinstance(value, bool):
                value = str(value).lower()
            print(f"{key}: {value}")
    return Exit.OK


def cmd_order_history(args) -> int:
    engine, _ = _scoped(args)
    records = engine.query_history(args.invoker, args.order)
    if args.json:
        print(_dump([r.to_dict() for r in records]))
    else:
        for r in records:
            req = r.request
            verdict = r.verdict.value + (f" {r.reason.value}" if r.reason else "")
            print(f"{r.seq:>6}  {req.tx_name:<14} {req.invoker_id:<8} {verdict}")
    return Exit.OK


def cmd_order_list(args) -> int:
    engine = open_network(Path(args.ledger))
    try:
        assets = engine.readable_assets(args.invoker)
    except UnknownIdentityError as exc:
        raise CliError(str(exc), Exit.UNKNOWN_IDENTITY) from None
    if args.json:
        print(_dump([a.to_dict() for a in assets]))
    else:
        for a in assets:
            print(f"{a.id}\t{a.status.value}")
    return Exit.OK


def cmd_ledger_verify(args) -> int:
    path = Path(args.ledger)
    try:
        bad = ledger.verify_file(path)
    except FileNotFoundError:
        raise CliError(f"no ledger at {path}", Exit.LEDGER_IO) from None
    except (OSError, ledger.LedgerFormatError) as exc:
        raise CliError(f"cannot read ledger {path}: {exc}", Exit.LEDGER_IO) from None
    if bad:
        print(f"violation: {bad}")
        return Exit.LEDGER_INVALID
    if args.replay:
        open_network(path)
    print(f"ok ({len(_load_chain(path))} blocks)")
    return Exit.OK


def cmd_policy_show(args) -> int:
    defn = builtin_order_processing()
    if args.definition:
        try:
            defn = parse_process_definition(Path(args.definition).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read definition: {exc}", Exit.LEDGER_IO) from None
        except (ProcessSyntaxError, DefinitionError) as exc:
            raise CliError(f"invalid definition: {exc}", Exit.MALFORMED) from None
    print(policy_for_definition(defn))
    return Exit.OK


def cmd_experiment_run(args) -> int:
    config = ExperimentConfig(
        shoppers=args.shoppers,
        sellers=args.sellers,
        deliveries=args.deliveries,
        orders=args.orders,
        accepted=args.accepted,
        accept_probability=args.accept_probability,
        intra=args.intra,
        seed=args.seed,
        batch_size=args.batch_size,
        interleave=args.interleave,
    )
    try:
        report, chain = run_experiment(config, strict=False)
    except ConfigError as exc:
        raise CliError(f"infeasible configuration: {exc}", Exit.USAGE) from None
    print(render_report(report), end="")
    if args.report:
        Path(args.report).write_text(_dump({"config": config.to_dict(), "report": report.to_dict()}) + "\n")
    if args.ledger_out:
        ledger.persist(chain, args.ledger_out)
    return exit_status(report)


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    default_ledger = os.environ.get(LEDGER_ENV, DEFAULT_LEDGER)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--ledger", default=default_ledger, help=f"ledger file (default ${LEDGER_ENV} or %(default)s)")
    scoped = argparse.ArgumentParser(add_help=False)
    scoped.add_argument("--as", dest="invoker", required=True, metavar="IDENTITY")
    scoped.add_argument("--order", required=True)
    scoped.add_argument("--json", action="store_true", help="canonical structured output")

    parser = argparse.ArgumentParser(prog="procchain", description=__doc__.split("\n")[0])
    groups = parser.add_subparsers(dest="group", required=True)

    network = groups.add_parser("network").add_subparsers(dest="action", required=True)
    p = network.add_parser("init", parents=[common], help="create a ledger and deploy a definition")
    p.add_argument("--definition", help="process definition file (default: built-in Order Processing)")
    p.set_defaults(func=cmd_network_init)

    participant = groups.add_parser("participant").add_subparsers(dest="action", required=True)
    p = participant.add_parser("add", parents=[common], help="register a participant (admin only)")
    p.add_argument("--id", required=True)
    p.add_argument("--role", required=True)
    p.add_argument("--first-name", default="")
    p.add_argument("--last-name", default="")
    p.add_argument("--company", default="")
    p.add_argument("--position", default="")
    p.add_argument("--as", dest="invoker", default=ADMIN_ID, metavar="IDENTITY")
    p.set_defaults(func=cmd_participant_add)

    tx = groups.add_parser("tx").add_subparsers(dest="action", required=True)
    p = tx.add_parser("submit", parents=[common], help="submit a transaction as IDENTITY")
    p.add_argument("--as", dest="invoker", required=True, metavar="IDENTITY")
    p.add_argument("--name", required=True, metavar="TXNAME")
    p.add_argument("--order", metavar="ORDERID")
    p.add_argument("--new-order", metavar="id=..,seller=..,delivery=..")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tx_submit)

    order = groups.add_parser("order").add_subparsers(dest="action", required=True)
    order.add_parser("show", parents=[common, scoped]).set_defaults(func=cmd_order_show)
    order.add_parser("history", parents=[common, scoped]).set_defaults(func=cmd_order_history)
    p = order.add_parser("list", parents=[common], help="orders readable by IDENTITY")
    p.add_argument("--as", dest="invoker", required=True, metavar="IDENTITY")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_order_list)

    led = groups.add_parser("ledger").add_subparsers(dest="action", required=True)
    p = led.add_parser("verify", parents=[common])
    p.add_argument("--replay", action="store_true", help="also re-validate every recorded verdict")
    p.set_defaults(func=cmd_ledger_verify)

    pol = groups.add_parser("policy").add_subparsers(dest="action", required=True)
    p = pol.add_parser("show")
    p.add_argument("--definition")
    p.set_defaults(func=cmd_policy_show)

    exp = groups.add_parser("experiment").add_subparsers(dest="action", required=True)
    p = exp.add_parser("run", help="reproduce the validation experiment")
    p.add_argument("--shoppers", type=int, default=20)
    p.add_argument("--sellers", type=int, default=5)
    p.add_argument("--deliveries", type=int, default=3)
    p.add_argument("--orders", type=int, default=200)
    p.add_argument("--accepted", type=int, help="exact accepted-order count (default: draw per order)")
    p.add_argument("--accept-probability", type=float, default=0.5)
    p.add_argument("--intra", type=int, help="exact intra-process invalid count (default: coin flip)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--interleave", action="store_true", help="interleave orders instead of running them in turn")
    p.add_argument("--report", metavar="PATH", help="also write a machine-readable report")
    p.add_argument("--ledger-out", metavar="PATH", help="persist the run's ledger")
    p.set_defaults(func=cmd_experiment_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
