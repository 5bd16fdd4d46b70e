"""Ordered first-match CRUD access control with relationship bindings.

Rules are checked in list order; the first rule whose role, operation,
resource and binding all match decides. A request no rule matches is denied.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from .model import ASSET_TYPE, Participant
from .process import ProcessDefinition, builtin_order_processing

ANY = "ANY"


class AclOperation(str, Enum):
    CREATE = "CREATE"
    READ = "READ"
    UPDATE = "UPDATE"
    DELETE = "DELETE"


class Effect(str, Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"


class AclError(ValueError):
    """A rule binding names a relationship the resource does not have."""


class Resource(Protocol):
    acl_resource: str

    def relation(self, name: str) -> str | frozenset[str]: ...

    def has_relation(self, name: str) -> bool: ...


@dataclass(frozen=True)
class Binding:
    """Relationship condition on the invoker.

    ``mode`` is ``"any"`` (no condition), ``"anyof"`` (invoker bound through
    at least one of ``fields``) or ``"allof"`` (bound through every field).
    A field holding a set binds its members.
    """

    mode: str = "any"
    fields: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("any", "anyof", "allof"):
            raise ValueError(f"unknown binding mode {self.mode!r}")
        if (self.mode == "any") != (not self.fields):
            raise ValueError("'any' takes no fields; 'anyof'/'allof' need at least one")

    @classmethod
    def anyof(cls, *fields: str) -> Binding:
        return cls("anyof", tuple(fields))

    @classmethod
    def allof(cls, *fields: str) -> Binding:
        return cls("allof", tuple(fields))

    def holds(self, invoker_id: str, resource: Resource) -> bool:
        if self.mode == "any":
            return True
        hits = []
        for f in self.fields:
            if not resource.has_relation(f):
                raise AclError(f"resource {resource.acl_resource!r} has no relationship {f!r}")
            value = resource.relation(f)
            hits.append(invoker_id in value if isinstance(value, frozenset) else invoker_id == value)
        return all(hits) if self.mode == "allof" else any(hits)

    def __str__(self) -> str:
        if self.mode == "any":
            return ANY
        return ("&" if self.mode == "allof" else "|").join(self.fields)


@dataclass(frozen=True)
class AclRule:
    role: str
    operations: frozenset[AclOperation]
    resource: str
    binding: Binding = Binding()
    effect: Effect = Effect.ALLOW

    def __post_init__(self) -> None:
        if not self.operations:
            raise ValueError("rule needs at least one operation")

    def matches(self, invoker: Participant, op: AclOperation, resource: Resource) -> bool:
        if self.role != ANY and self.role != invoker.role:
            return False
        if op not in self.operations:
            return False
        if self.resource != ANY and self.resource != resource.acl_resource:
            return False
        return self.binding.holds(invoker.id, resource)

    def __str__(self) -> str:
        ops = ",".join(o.value for o in AclOperation if o in self.operations)
        return f"{self.effect.value} {self.role} {ops} {self.resource} BOUND {self.binding}"


@dataclass(frozen=True)
class AclPolicy:
    rules: tuple[AclRule, ...] = ()

    def __str__(self) -> str:
        return "\n".join([*(str(r) for r in self.rules), "DENY ANY CREATE,READ,UPDATE,DELETE ANY BOUND ANY"])


@dataclass(frozen=True)
class Decision:
    effect: Effect
    rule: int | None  # index of the deciding rule; None for the implicit deny

    @property
    def allowed(self) -> bool:
        return self.effect is Effect.ALLOW


def evaluate(policy: AclPolicy, invoker: Participant, op: AclOperation, resource: Resource) -> Decision:
    for i, rule in enumerate(policy.rules):
        if rule.matches(invoker, op, resource):
            return Decision(rule.effect, i)
    return Decision(Effect.DENY, None)


def filter_readable(policy: AclPolicy, invoker: Participant, assets: Iterable[Resource]) -> list:
    return [a for a in assets if evaluate(policy, invoker, AclOperation.READ, a).allowed]


def policy_for_definition(defn: ProcessDefinition) -> AclPolicy:
    """Creator-only creation, party-bound reads, actor-and-responsible updates."""
    create = defn.create
    rules = [
        AclRule(create.actor, frozenset({AclOperation.CREATE}), create.name, Binding.anyof(create.actor)),
        AclRule(ANY, frozenset({AclOperation.READ}), ASSET_TYPE, Binding.anyof(*defn.parties)),
    ]
    for t in defn.tasks:
        rules.append(
            AclRule(t.actor, frozenset({AclOperation.UPDATE}), t.name, Binding.allof(t.actor, "responsible"))
        )
    return AclPolicy(tuple(rules))


def default_order_processing_policy() -> AclPolicy:
    return policy_for_definition(builtin_order_processing())
