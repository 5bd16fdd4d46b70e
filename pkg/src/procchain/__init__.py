"""Permissioned execution of collaborative business processes on a hash-chained ledger."""

from .acl import AclOperation, AclPolicy, AclRule, Binding, Effect, default_order_processing_policy, evaluate, filter_readable
from .engine import Engine, NotVisibleError, UnknownIdentityError, state_hash
from .ledger import Chain, TxRecord, append, load, persist, replay, verify_chain, verify_file
from .model import (
    ADMIN_ID,
    NewAsset,
    OrderAsset,
    Participant,
    Reason,
    RegistrationRequest,
    TransactionOutcome,
    TransactionRequest,
    Verdict,
    WorldState,
)
from .process import (
    FlagState,
    ProcessDefinition,
    builtin_order_processing,
    enabled_transactions,
    evaluate_guard,
    parse_process_definition,
    render_definition,
    validate_definition,
)

__version__ = "0.1.0"
