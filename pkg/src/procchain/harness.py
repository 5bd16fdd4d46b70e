"""Validation experiment: drive many process instances through the engine,
following every valid step with one invalid attempt, and tabulate the result.

Invalid attempts come in two classes:

* intra-process: the correct bound actor submits a transaction that is not
  enabled right now (premature or repeated);
* inter-process: a transaction that is enabled right now, submitted by a
  participant of the right role who is not bound to that order.
"""

from __future__ import annotations

import random
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .acl import AclPolicy
from .engine import Engine, Observer
from .ledger import Chain, canonical
from .model import NewAsset, Participant, RegistrationRequest, TransactionRequest
from .process import ProcessDefinition, builtin_order_processing, enabled_transactions, fire

ROLE_PREFIX = {"shopper": "S", "seller": "M", "delivery": "L"}


class ConfigError(ValueError):
    pass


class ExperimentError(AssertionError):
    """A valid request was rejected or an invalid one committed."""


class Tag(str, Enum):
    VALID = "VALID"
    INTRA_INVALID = "INTRA_INVALID"
    INTER_INVALID = "INTER_INVALID"


@dataclass(frozen=True)
class ExperimentConfig:
    shoppers: int = 20
    sellers: int = 5
    deliveries: int = 3
    orders: int = 200
    # exact number of orders taking the accept branch; None draws each order
    # independently with accept_probability
    accepted: int | None = None
    accept_probability: float = 0.5
    # exact number of intra-process invalid attempts; None flips a coin per attempt
    intra: int | None = None
    seed: int = 42
    batch_size: int = 1
    interleave: bool = False
    accept_flag: str = "accepted"
    reject_flag: str = "rejected"

    def role_counts(self) -> dict[str, int]:
        return {"shopper": self.shoppers, "seller": self.sellers, "delivery": self.deliveries}

    def to_dict(self) -> dict[str, Any]:
        return {
            "shoppers": self.shoppers,
            "sellers": self.sellers,
            "deliveries": self.deliveries,
            "orders": self.orders,
            "accepted": self.accepted,
            "acceptProbability": str(self.accept_probability),
            "intra": self.intra,
            "seed": self.seed,
            "batchSize": self.batch_size,
            "interleave": self.interleave,
        }


REFERENCE_CONFIG = ExperimentConfig(shoppers=20, sellers=5, deliveries=3, orders=200, accepted=126, seed=42)


@dataclass(frozen=True)
class ScheduledRequest:
    tag: Tag
    order_id: str
    request: TransactionRequest

    def to_dict(self) -> dict[str, Any]:
        return {"tag": self.tag.value, "orderId": self.order_id, "request": self.request.to_dict()}


def participant_ids(config: ExperimentConfig, defn: ProcessDefinition) -> dict[str, list[str]]:
    counts = config.role_counts()
    out = {}
    for role in defn.parties:
        prefix = ROLE_PREFIX.get(role, role + "-")
        out[role] = [f"{prefix}{i}" for i in range(1, counts.get(role, 0) + 1)]
    return out


def participants(config: ExperimentConfig, defn: ProcessDefinition) -> list[Participant]:
    return [
        Participant(pid, role, first_name=role.capitalize(), last_name=pid, company_name=f"{pid} Co.", position=role)
        for role, ids in participant_ids(config, defn).items()
        for pid in ids
    ]


def _check(config: ExperimentConfig, defn: ProcessDefinition) -> None:
    counts = [config.shoppers, config.sellers, config.deliveries, config.orders]
    if any(c < 0 for c in counts) or config.batch_size < 1:
        raise ConfigError("counts must be non-negative and batch_size positive")
    unknown = set(defn.parties) - set(config.role_counts())
    if unknown:
        raise ConfigError(f"no participant count for roles {sorted(unknown)}")
    empty = [r for r in defn.parties if config.role_counts()[r] == 0]
    if config.orders and empty:
        raise ConfigError(f"no participants for roles {empty}")
    if config.accepted is not None and not 0 <= config.accepted <= config.orders:
        raise ConfigError(f"accepted={config.accepted} outside 0..{config.orders}")
    if not 0.0 <= config.accept_probability <= 1.0:
        raise ConfigError("accept_probability must lie in [0, 1]")
    for f in (config.accept_flag, config.reject_flag):
        if f not in defn.flags:
            raise ConfigError(f"definition has no {f!r} flag")


def _valid_path(defn: ProcessDefinition, forbid: str, rng: random.Random) -> list[str]:
    """Random guard-respecting task sequence to closure that never fires ``forbid``."""
    state = defn.initial_state()
    path = []
    while state.active:
        options = sorted(enabled_transactions(defn, state) - {forbid})
        if not options:
            raise ConfigError(f"process {defn.name} gets stuck after {path}")
        step = rng.choice(options)
        path.append(step)
        state = fire(defn, state, step)
    return path


def generate_schedule(config: ExperimentConfig, defn: ProcessDefinition | None = None) -> list[ScheduledRequest]:
    """Deterministic request schedule for ``config``: valid/invalid pairs per order."""
    defn = defn or builtin_order_processing()
    _check(config, defn)
    rng = random.Random(config.seed)
    registry = participant_ids(config, defn)
    create = defn.create

    if config.accepted is not None:
        accepted = set(rng.sample(range(config.orders), config.accepted))
    else:
        accepted = {i for i in range(config.orders) if rng.random() < config.accept_probability}

    orders = []
    for i in range(config.orders):
        oid = f"O{i + 1}"
        parties = {role: rng.choice(registry[role]) for role in defn.parties}
        forbid = config.reject_flag if i in accepted else config.accept_flag
        orders.append((oid, parties, [create.name, *_valid_path(defn, forbid, rng)]))

    total = sum(len(path) for _, _, path in orders)
    if config.intra is not None:
        if not 0 <= config.intra <= total:
            raise ConfigError(f"intra={config.intra} outside 0..{total}")
        intra_slots = set(rng.sample(range(total), config.intra))

    per_order: list[list[ScheduledRequest]] = []
    slot = 0
    for oid, parties, path in orders:
        creator = parties[create.actor]
        new_asset = NewAsset(
            oid,
            {r: p for r, p in parties.items() if r != create.actor},
            name=f"order {oid}",
            description=f"order {oid} placed by {creator}",
        )
        state = defn.initial_state()
        pairs = []
        for step in path:
            if step == create.name:
                valid = TransactionRequest(create.name, creator, 0, new_asset=new_asset)
            else:
                valid = TransactionRequest(step, parties[defn.transaction(step).actor], 0, oid)
                state = fire(defn, state, step)
            pairs.append(ScheduledRequest(Tag.VALID, oid, valid))

            enabled = enabled_transactions(defn, state)
            intra_options = [t for t in defn.flags if t not in enabled]
            # after closure nothing is enabled; replay the last step under a foreign identity
            inter_options = [
                t for t in (sorted(enabled) or [step])
                if len(registry[defn.transaction(t).actor]) > 1
            ]
            if config.intra is not None:
                want_intra = slot in intra_slots
                if not (intra_options if want_intra else inter_options):
                    raise ConfigError(f"cannot place a {'intra' if want_intra else 'inter'} attempt on {oid}")
            elif intra_options and inter_options:
                want_intra = rng.random() < 0.5
            elif intra_options or inter_options:
                want_intra = bool(intra_options)
            else:
                raise ConfigError(f"no invalid attempt possible on {oid} after {step}")
            slot += 1

            if want_intra:
                t = rng.choice(intra_options)
                invalid = TransactionRequest(t, parties[defn.transaction(t).actor], 0, oid)
                pairs.append(ScheduledRequest(Tag.INTRA_INVALID, oid, invalid))
            else:
                t = rng.choice(inter_options)
                role = defn.transaction(t).actor
                intruder = rng.choice([p for p in registry[role] if p != parties[role]])
                if t == create.name:
                    invalid = TransactionRequest(t, intruder, 0, new_asset=new_asset)
                else:
                    invalid = TransactionRequest(t, intruder, 0, oid)
                pairs.append(ScheduledRequest(Tag.INTER_INVALID, oid, invalid))
        per_order.append(pairs)

    if config.interleave:
        merged: list[ScheduledRequest] = []
        queues = [list(reversed(p)) for p in per_order]
        live = [i for i, q in enumerate(queues) if q]
        while live:
            i = rng.choice(live)
            q = queues[i]
            merged.extend([q.pop(), q.pop()])
            if not q:
                live.remove(i)
    else:
        merged = [s for pairs in per_order for s in pairs]

    base = sum(len(ids) for ids in registry.values())
    return [
        ScheduledRequest(s.tag, s.order_id, _with_nonce(s.request, base + n))
        for n, s in enumerate(merged)
    ]


def _with_nonce(req: TransactionRequest, nonce: int) -> TransactionRequest:
    return TransactionRequest(req.tx_name, req.invoker_id, nonce, req.asset_id, req.new_asset)


def schedule_bytes(schedule: Iterable[ScheduledRequest]) -> bytes:
    return canonical([s.to_dict() for s in schedule])


# --- report ----------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentReport:
    seed: int
    participants: Mapping[str, int]
    assets: int = 0
    accepted_assets: int = 0
    rejected_assets: int = 0
    valid: int = 0
    valid_committed: int = 0
    intra: int = 0
    intra_rejected: int = 0
    inter: int = 0
    inter_rejected: int = 0
    accept_flag: str = "accepted"
    reject_flag: str = "rejected"
    failures: tuple[str, ...] = field(default=())

    @property
    def invalid(self) -> int:
        return self.intra + self.inter

    @property
    def invalid_rejected(self) -> int:
        return self.intra_rejected + self.inter_rejected

    @staticmethod
    def _pct(part: int, whole: int) -> float | None:
        return None if whole == 0 else 100.0 * part / whole

    @property
    def valid_pct(self) -> float | None:
        return self._pct(self.valid_committed, self.valid)

    @property
    def invalid_pct(self) -> float | None:
        return self._pct(self.invalid_rejected, self.invalid)

    @property
    def intra_pct(self) -> float | None:
        return self._pct(self.intra_rejected, self.intra)

    @property
    def inter_pct(self) -> float | None:
        return self._pct(self.inter_rejected, self.inter)

    @property
    def passed(self) -> bool:
        # an empty run has nothing to fail
        return self.valid_committed == self.valid and self.invalid_rejected == self.invalid

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "participants": dict(self.participants),
            "assets": self.assets,
            "acceptedAssets": self.accepted_assets,
            "rejectedAssets": self.rejected_assets,
            "validTransactions": self.valid,
            "validCommitted": self.valid_committed,
            "intraInvalid": self.intra,
            "intraRejected": self.intra_rejected,
            "interInvalid": self.inter,
            "interRejected": self.inter_rejected,
            "passed": self.passed,
        }


def derive_report(
    config: ExperimentConfig,
    defn: ProcessDefinition,
    chain: Chain,
    schedule: Sequence[ScheduledRequest],
    final_assets: Iterable,
    failures: Sequence[str] = (),
) -> ExperimentReport:
    """Tabulate a run from its ledger. Scheduled requests are matched to records by nonce."""
    tag_of = {s.request.nonce: s.tag for s in schedule}
    roles: Counter[str] = Counter()
    tally: Counter[tuple[Tag, bool]] = Counter()
    for rec in chain.records():
        req = rec.request
        if isinstance(req, RegistrationRequest):
            if rec.committed:
                roles[req.participant.role] += 1
            continue
        tag = tag_of.get(req.nonce)
        if tag is not None:
            tally[tag, rec.committed] += 1

    assets = list(final_assets)
    return ExperimentReport(
        seed=config.seed,
        participants={r: roles[r] for r in defn.parties},
        assets=len(assets),
        accepted_assets=sum(1 for a in assets if a.flags[config.accept_flag]),
        rejected_assets=sum(1 for a in assets if a.flags[config.reject_flag]),
        valid=tally[Tag.VALID, True] + tally[Tag.VALID, False],
        valid_committed=tally[Tag.VALID, True],
        intra=tally[Tag.INTRA_INVALID, True] + tally[Tag.INTRA_INVALID, False],
        intra_rejected=tally[Tag.INTRA_INVALID, False],
        inter=tally[Tag.INTER_INVALID, True] + tally[Tag.INTER_INVALID, False],
        inter_rejected=tally[Tag.INTER_INVALID, False],
        accept_flag=config.accept_flag,
        reject_flag=config.reject_flag,
        failures=tuple(failures),
    )


def run_experiment(
    config: ExperimentConfig = REFERENCE_CONFIG,
    defn: ProcessDefinition | None = None,
    policy: AclPolicy | None = None,
    *,
    strict: bool = True,
    observers: Sequence[Observer] = (),
) -> tuple[ExperimentReport, Chain]:
    """Register participants, execute the schedule and report.

    With ``strict`` the first wrongly decided request raises
    :class:`ExperimentError`; otherwise failures are collected in the report.
    """
    defn = defn or builtin_order_processing()
    schedule = generate_schedule(config, defn)
    engine = Engine(defn, policy, batch_size=config.batch_size)
    engine.observers.extend(observers)
    for p in participants(config, defn):
        outcome = engine.register_participant(p)
        if not outcome.committed:
            raise ExperimentError(f"registering {p.id} failed: {outcome}")

    failures = []
    for s in schedule:
        outcome = engine.submit(s.request)
        if outcome.committed != (s.tag is Tag.VALID):
            msg = f"{s.tag.value} {s.request.tx_name} by {s.request.invoker_id} on {s.order_id}: {outcome}"
            if strict:
                raise ExperimentError(msg)
            failures.append(msg)

    chain = engine.seal()
    report = derive_report(config, defn, chain, schedule, engine.state.assets.values(), failures)
    return report, chain


def _fmt_pct(pct: float | None) -> str:
    if pct is None:
        return "n/a"
    if pct == int(pct):
        return f"{int(pct)}%"
    return f"{pct:.2f}%"


def report_rows(report: ExperimentReport) -> list[tuple[str, str]]:
    rows = [(f"Number of participant instances with {role} type", str(n)) for role, n in report.participants.items()]
    rows += [
        ("Number of all asset instances", str(report.assets)),
        (f'Number of asset instances with true "{report.accept_flag}" property', str(report.accepted_assets)),
        (f'Number of asset instances with true "{report.reject_flag}" property', str(report.rejected_assets)),
        ("Number of all valid transactions", str(report.valid)),
        ("Percentage of successful valid transaction", _fmt_pct(report.valid_pct)),
        ("Number of all intra-process invalid transactions", str(report.intra)),
        ("Number of all inter-processes invalid transactions", str(report.inter)),
        ("Percentage of failed invalid transactions", _fmt_pct(report.invalid_pct)),
        ("Percentage of failed intra-process invalid transactions", _fmt_pct(report.intra_pct)),
        ("Percentage of failed inter-processes invalid transactions", _fmt_pct(report.inter_pct)),
        ("Seed", str(report.seed)),
    ]
    return rows


def render_report(report: ExperimentReport) -> str:
    rows = report_rows(report)
    width = max(len(label) for label, _ in rows)
    lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
    lines += [f"FAILURE: {f}" for f in report.failures]
    return "\n".join(lines) + "\n"


def exit_status(report: ExperimentReport) -> int:
    return 0 if report.passed else 1
