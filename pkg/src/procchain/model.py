"""Participants and process-instance assets shared by the ACL, engine and ledger."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Union

from .process import FlagState, Status

ADMIN_ID = "admin"
# role carried by the bootstrap identity; never a party of any definition
ADMIN_ROLE = "$admin"

ASSET_TYPE = "Order"


@dataclass(frozen=True)
class Participant:
    id: str
    role: str
    first_name: str = ""
    last_name: str = ""
    company_name: str = ""
    position: str = ""

    @property
    def is_admin(self) -> bool:
        return self.role == ADMIN_ROLE

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "role": self.role,
            "firstName": self.first_name,
            "lastName": self.last_name,
            "companyName": self.company_name,
            "position": self.position,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Participant:
        return cls(
            id=d["id"],
            role=d["role"],
            first_name=d.get("firstName", ""),
            last_name=d.get("lastName", ""),
            company_name=d.get("companyName", ""),
            position=d.get("position", ""),
        )


ADMIN = Participant(ADMIN_ID, ADMIN_ROLE, "network", "administrator")


@dataclass(frozen=True)
class OrderAsset:
    """One process instance.

    ``flags`` carries the task booleans and the active/closed status;
    ``parties`` maps each party role to the bound participant id.
    """

    id: str
    name: str
    description: str
    flags: FlagState
    parties: Mapping[str, str]
    responsible: frozenset[str] = field(default_factory=frozenset)

    acl_resource = ASSET_TYPE

    @property
    def status(self) -> Status:
        return self.flags.status

    def relation(self, name: str) -> str | frozenset[str]:
        if name == "responsible":
            return self.responsible
        return self.parties[name]

    def has_relation(self, name: str) -> bool:
        return name == "responsible" or name in self.parties

    def evolve(self, **changes: Any) -> OrderAsset:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Flat record: fixed fields, one boolean per task, one id per party."""
        d: dict[str, Any] = {
            "status": self.status.value,
            "id": self.id,
            "name": self.name,
            "description": self.description,
        }
        d.update(self.flags)
        d.update(self.parties)
        d["responsible"] = sorted(self.responsible)
        return d


@dataclass(frozen=True)
class TxTarget:
    """ACL resource for a transaction aimed at an asset (existing or proposed)."""

    tx_name: str
    asset: OrderAsset

    @property
    def acl_resource(self) -> str:
        return self.tx_name

    def relation(self, name: str) -> str | frozenset[str]:
        return self.asset.relation(name)

    def has_relation(self, name: str) -> bool:
        return self.asset.has_relation(name)


# --- requests and outcomes -------------------------------------------------


class Verdict(str, Enum):
    COMMITTED = "COMMITTED"
    REJECTED = "REJECTED"


class Reason(str, Enum):
    UNKNOWN_IDENTITY = "UNKNOWN_IDENTITY"
    UNKNOWN_ASSET = "UNKNOWN_ASSET"
    ACL_DENIED = "ACL_DENIED"
    GUARD_FALSE = "GUARD_FALSE"
    ALREADY_PERFORMED = "ALREADY_PERFORMED"
    ASSET_CLOSED = "ASSET_CLOSED"
    DUPLICATE_ASSET_ID = "DUPLICATE_ASSET_ID"
    MALFORMED = "MALFORMED"


@dataclass(frozen=True)
class TransactionOutcome:
    verdict: Verdict
    reason: Reason | None = None
    detail: str = ""

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.COMMITTED) != (self.reason is None):
            raise ValueError("COMMITTED outcomes carry no reason; REJECTED ones must")

    @property
    def committed(self) -> bool:
        return self.verdict is Verdict.COMMITTED

    def __str__(self) -> str:
        text = self.verdict.value if self.reason is None else f"{self.verdict.value} {self.reason.value}"
        return f"{text}: {self.detail}" if self.detail else text


COMMITTED = TransactionOutcome(Verdict.COMMITTED)


def rejected(reason: Reason, detail: str = "") -> TransactionOutcome:
    return TransactionOutcome(Verdict.REJECTED, reason, detail)


@dataclass(frozen=True)
class NewAsset:
    """Fields supplied by a create transaction; ``parties`` excludes the creator's role."""

    id: str
    parties: Mapping[str, str]
    name: str = ""
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name, "description": self.description, "parties": dict(self.parties)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> NewAsset:
        return cls(d["id"], dict(d["parties"]), d.get("name", ""), d.get("description", ""))


@dataclass(frozen=True)
class TransactionRequest:
    tx_name: str
    invoker_id: str
    nonce: int
    asset_id: str | None = None
    new_asset: NewAsset | None = None

    @property
    def target_id(self) -> str | None:
        return self.new_asset.id if self.new_asset is not None else self.asset_id

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "transaction",
            "txName": self.tx_name,
            "invokerId": self.invoker_id,
            "nonce": self.nonce,
            "assetId": self.asset_id,
            "newAsset": None if self.new_asset is None else self.new_asset.to_dict(),
        }


@dataclass(frozen=True)
class RegistrationRequest:
    participant: Participant
    invoker_id: str
    nonce: int

    target_id = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "register",
            "invokerId": self.invoker_id,
            "nonce": self.nonce,
            "participant": self.participant.to_dict(),
        }


@dataclass(frozen=True)
class DeployRequest:
    """Records the process definition a network runs (by its rendered text)."""

    definition: str
    invoker_id: str
    nonce: int

    target_id = None

    def to_dict(self) -> dict[str, Any]:
        return {"type": "deploy", "invokerId": self.invoker_id, "nonce": self.nonce, "definition": self.definition}


Request = Union[TransactionRequest, RegistrationRequest, DeployRequest]


def request_from_dict(d: Mapping[str, Any]) -> Request:
    kind = d["type"]
    if kind == "transaction":
        new = d.get("newAsset")
        return TransactionRequest(
            d["txName"], d["invokerId"], d["nonce"], d.get("assetId"),
            None if new is None else NewAsset.from_dict(new),
        )
    if kind == "register":
        return RegistrationRequest(Participant.from_dict(d["participant"]), d["invokerId"], d["nonce"])
    if kind == "deploy":
        return DeployRequest(d["definition"], d["invokerId"], d["nonce"])
    raise ValueError(f"unknown request type {kind!r}")


# --- world state -----------------------------------------------------------


@dataclass(frozen=True)
class WorldState:
    """Materialized view of the ledger. Copy-on-write: never mutated in place."""

    participants: Mapping[str, Participant] = field(default_factory=dict)
    assets: Mapping[str, OrderAsset] = field(default_factory=dict)
    applied_nonces: frozenset[int] = frozenset()
    definition: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "participants": {k: p.to_dict() for k, p in self.participants.items()},
            "assets": {k: a.to_dict() for k, a in self.assets.items()},
            "appliedNonces": sorted(self.applied_nonces),
            "definition": self.definition,
        }
