"""Transaction validation and application against the world state.

Every request passes one fixed pipeline and produces a ledger record,
committed or rejected. Only committed requests change the world state.
"""

from __future__ import annotations

import hashlib
import threading
from collections.abc import Callable
from dataclasses import replace

from . import ledger
from .acl import AclOperation, AclPolicy, evaluate, filter_readable, policy_for_definition
from .ledger import Chain, TxRecord
from .model import (
    ADMIN,
    ADMIN_ID,
    COMMITTED,
    DeployRequest,
    NewAsset,
    OrderAsset,
    Participant,
    Reason,
    RegistrationRequest,
    Request,
    TransactionOutcome,
    TransactionRequest,
    TxTarget,
    WorldState,
    rejected,
)
from .process import (
    FlagState,
    ProcessDefinition,
    ProcessSyntaxError,
    DefinitionError,
    Status,
    TxKind,
    enabled_transactions,
    evaluate_guard,
    fire,
    parse_process_definition,
    render_definition,
    render_guard,
)

Observer = Callable[[TxRecord, WorldState], None]


class EngineError(Exception):
    pass


class UnknownIdentityError(EngineError):
    reason = Reason.UNKNOWN_IDENTITY


class NotVisibleError(EngineError):
    """Asset missing or not readable by the invoker; the two are indistinguishable."""

    reason = Reason.ACL_DENIED


def state_hash(state: WorldState) -> str:
    return hashlib.sha256(ledger.canonical(state.to_dict())).hexdigest()


def responsible_for(defn: ProcessDefinition, flags: FlagState, parties) -> frozenset[str]:
    """Participants bound to the actors of the currently enabled tasks."""
    return frozenset(parties[defn.transaction(t).actor] for t in enabled_transactions(defn, flags))


class Engine:
    """Single-writer executor for one deployed process definition.

    Mutations are serialized by a lock; readers use :attr:`state`, an
    immutable snapshot replaced on every commit.
    """

    def __init__(
        self,
        defn: ProcessDefinition,
        policy: AclPolicy | None = None,
        *,
        chain: Chain | None = None,
        batch_size: int = 1,
        record: bool = True,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.defn = defn
        self.policy = policy if policy is not None else policy_for_definition(defn)
        self.batch_size = batch_size
        self.state = WorldState()
        self.chain = chain if chain is not None else Chain()
        self.observers: list[Observer] = []
        self._record = record
        self._pending: list[TxRecord] = []
        self._seq = self.chain.next_seq
        self._lock = threading.Lock()

    @classmethod
    def from_chain(cls, chain: Chain, defn: ProcessDefinition, policy: AclPolicy | None = None,
                   *, batch_size: int = 1) -> Engine:
        """Resume a network: replay ``chain`` (verdict-checked) and continue appending to it."""
        engine = cls(defn, policy, chain=chain, batch_size=batch_size)
        engine.state = ledger.replay(chain, defn, engine.policy)
        return engine

    # --- identity helpers ---

    def identity(self, participant_id: str) -> Participant | None:
        if participant_id == ADMIN_ID:
            return ADMIN
        return self.state.participants.get(participant_id)

    # --- writes ---

    def register_participant(self, participant: Participant, invoker_id: str = ADMIN_ID,
                             nonce: int | None = None) -> TransactionOutcome:
        return self.submit(RegistrationRequest(participant, invoker_id, self._nonce(nonce)))

    def deploy(self, invoker_id: str = ADMIN_ID, nonce: int | None = None) -> TransactionOutcome:
        return self.submit(DeployRequest(render_definition(self.defn), invoker_id, self._nonce(nonce)))

    def submit(self, req: Request) -> TransactionOutcome:
        """Validate ``req``, apply it if valid and record the result."""
        with self._lock:
            outcome, new_state, status = self._validate(req)
            if outcome.committed:
                self.state = new_state
            rec = TxRecord(self._seq, req, outcome.verdict, outcome.reason, status)
            self._seq += 1
            if self._record:
                self._pending.append(rec)
                if len(self._pending) >= self.batch_size:
                    self._flush()
            for obs in self.observers:
                obs(rec, self.state)
            return outcome

    apply = submit

    def seal(self) -> Chain:
        """Seal any partially filled batch into a block and return the chain."""
        with self._lock:
            self._flush()
            return self.chain

    def _flush(self) -> None:
        if self._pending:
            self.chain = ledger.append(self.chain, self._pending, self.batch_size)
            self._pending = []

    def _nonce(self, nonce: int | None) -> int:
        return self._seq if nonce is None else nonce

    @property
    def next_nonce(self) -> int:
        """Default nonce for the next request: its ledger sequence number."""
        return self._seq

    @property
    def records(self) -> list[TxRecord]:
        """All records so far, sealed or still pending."""
        return [*self.chain.records(), *self._pending]

    # --- pipeline ---

    def _validate(self, req: Request) -> tuple[TransactionOutcome, WorldState, Status | None]:
        st = self.state
        if req.nonce in st.applied_nonces:
            return rejected(Reason.MALFORMED, f"nonce {req.nonce} already applied"), st, None
        if isinstance(req, RegistrationRequest):
            return self._register(req, st)
        if isinstance(req, DeployRequest):
            return self._deploy(req, st)
        if not isinstance(req, TransactionRequest):
            return rejected(Reason.MALFORMED, f"unsupported request {type(req).__name__}"), st, None

        try:
            tdef = self.defn.transaction(req.tx_name)
        except KeyError:
            return rejected(Reason.MALFORMED, f"unknown transaction {req.tx_name!r}"), st, None
        if tdef.kind is TxKind.CREATE:
            if req.new_asset is None or req.asset_id not in (None, req.new_asset.id):
                return rejected(Reason.MALFORMED, f"{tdef.name} needs new-asset fields"), st, None
        elif req.asset_id is None or req.new_asset is not None:
            return rejected(Reason.MALFORMED, f"{tdef.name} needs an asset id and no new-asset fields"), st, None

        invoker = self.identity(req.invoker_id)
        if invoker is None:
            return rejected(Reason.UNKNOWN_IDENTITY, f"unknown identity {req.invoker_id!r}"), st, None
        if tdef.kind is TxKind.CREATE:
            return self._create(req, req.new_asset, invoker, st)
        return self._task(req, tdef, invoker, st)

    def _register(self, req: RegistrationRequest, st: WorldState):
        p = req.participant
        if p.role not in self.defn.parties or not p.id:
            return rejected(Reason.MALFORMED, f"role must be one of {', '.join(self.defn.parties)}"), st, None
        invoker = self.identity(req.invoker_id)
        if invoker is None:
            return rejected(Reason.UNKNOWN_IDENTITY, f"unknown identity {req.invoker_id!r}"), st, None
        if not invoker.is_admin:
            return rejected(Reason.ACL_DENIED, "only the admin may register participants"), st, None
        if p.id == ADMIN_ID or p.id in st.participants:
            return rejected(Reason.DUPLICATE_ASSET_ID, f"participant id {p.id!r} taken"), st, None
        new = replace(
            st,
            participants={**st.participants, p.id: p},
            applied_nonces=st.applied_nonces | {req.nonce},
        )
        return COMMITTED, new, None

    def _deploy(self, req: DeployRequest, st: WorldState):
        invoker = self.identity(req.invoker_id)
        if invoker is None:
            return rejected(Reason.UNKNOWN_IDENTITY, f"unknown identity {req.invoker_id!r}"), st, None
        if not invoker.is_admin:
            return rejected(Reason.ACL_DENIED, "only the admin may deploy"), st, None
        if st.definition is not None:
            return rejected(Reason.MALFORMED, "a definition is already deployed"), st, None
        try:
            defn = parse_process_definition(req.definition)
        except (ProcessSyntaxError, DefinitionError) as exc:
            return rejected(Reason.MALFORMED, f"definition does not parse: {exc}"), st, None
        if defn != self.defn:
            return rejected(Reason.MALFORMED, "definition differs from the one this engine runs"), st, None
        new = replace(st, definition=req.definition, applied_nonces=st.applied_nonces | {req.nonce})
        return COMMITTED, new, None

    def _create(self, req: TransactionRequest, new: NewAsset, invoker: Participant, st: WorldState):
        create = self.defn.create
        if new.id in st.assets:
            existing = st.assets[new.id].status
            return rejected(Reason.DUPLICATE_ASSET_ID, f"asset {new.id!r} exists"), st, existing
        expected = set(self.defn.parties) - {create.actor}
        if set(new.parties) != expected or not new.id:
            return rejected(Reason.MALFORMED, f"new asset must bind exactly {sorted(expected)}"), st, None
        for role, pid in new.parties.items():
            p = st.participants.get(pid)
            if p is None or p.role != role:
                return rejected(Reason.MALFORMED, f"{role} reference {pid!r} is not a registered {role}"), st, None

        bound = {create.actor: invoker.id, **new.parties}
        parties = {r: bound[r] for r in self.defn.parties}
        flags = self.defn.initial_state()
        asset = OrderAsset(new.id, new.name, new.description, flags, parties)
        decision = evaluate(self.policy, invoker, AclOperation.CREATE, TxTarget(create.name, asset))
        if not decision.allowed:
            return rejected(Reason.ACL_DENIED, f"{invoker.id} may not {create.name}"), st, None
        asset = asset.evolve(responsible=responsible_for(self.defn, flags, parties))
        return COMMITTED, self._with_asset(st, asset, req.nonce), asset.status

    def _task(self, req: TransactionRequest, tdef, invoker: Participant, st: WorldState):
        asset = st.assets.get(req.asset_id)
        if asset is None:
            return rejected(Reason.UNKNOWN_ASSET, f"no asset {req.asset_id!r}"), st, None
        if asset.status is Status.CLOSED:
            return rejected(Reason.ASSET_CLOSED, f"asset {asset.id} is closed"), st, asset.status
        if asset.flags[tdef.name]:
            return rejected(Reason.ALREADY_PERFORMED, f"{tdef.name} already performed"), st, asset.status
        decision = evaluate(self.policy, invoker, AclOperation.UPDATE, TxTarget(tdef.name, asset))
        if not decision.allowed:
            return rejected(Reason.ACL_DENIED, f"{invoker.id} may not {tdef.name} on {asset.id}"), st, asset.status
        if not evaluate_guard(tdef.effective_guard, asset.flags):
            detail = f"guard of {tdef.name} not satisfied: {render_guard(tdef.guard)}"
            return rejected(Reason.GUARD_FALSE, detail), st, asset.status
        flags = fire(self.defn, asset.flags, tdef.name)
        asset = asset.evolve(flags=flags, responsible=responsible_for(self.defn, flags, asset.parties))
        return COMMITTED, self._with_asset(st, asset, req.nonce), asset.status

    @staticmethod
    def _with_asset(st: WorldState, asset: OrderAsset, nonce: int) -> WorldState:
        return replace(st, assets={**st.assets, asset.id: asset}, applied_nonces=st.applied_nonces | {nonce})

    # --- reads ---

    def _reader(self, invoker_id: str) -> Participant:
        invoker = self.identity(invoker_id)
        if invoker is None:
            raise UnknownIdentityError(f"unknown identity {invoker_id!r}")
        return invoker

    def query_asset(self, invoker_id: str, asset_id: str) -> OrderAsset:
        """Return the asset if ``invoker_id`` may read it, else raise :class:`NotVisibleError`."""
        st = self.state
        invoker = self._reader(invoker_id)
        asset = st.assets.get(asset_id)
        if asset is None or not evaluate(self.policy, invoker, AclOperation.READ, asset).allowed:
            raise NotVisibleError(f"order {asset_id!r} is not visible to {invoker_id}")
        return asset

    def query_history(self, invoker_id: str, asset_id: str) -> list[TxRecord]:
        """Every record, committed or rejected, aimed at ``asset_id``, in ledger order."""
        self.query_asset(invoker_id, asset_id)
        return [r for r in self.records if r.request.target_id == asset_id]

    def readable_assets(self, invoker_id: str) -> list[OrderAsset]:
        invoker = self._reader(invoker_id)
        return filter_readable(self.policy, invoker, self.state.assets.values())
