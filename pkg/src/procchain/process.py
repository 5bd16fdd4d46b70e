"""Process definitions: a small textual BPMN subset, guard expressions and
the enabled-transaction computation that drives every process instance.

A definition document is line oriented::

    process OrderProcessing
    parties shopper, seller, delivery
    create createOrder by shopper
    task receiveOrder by seller when true
    ...
    task closeOrder by seller when rejected | (acceptPayment & shipOrder) closes

Each ``task`` owns one boolean flag with the same name. A task is enabled
when its guard holds, its own flag is still false and the instance is active.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

KEYWORDS = frozenset({"process", "parties", "create", "task", "by", "when", "closes", "true", "false"})

# asset fields that flags and party relationships must not shadow
RESERVED_FIELDS = frozenset({"id", "name", "description", "status", "responsible"})

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class Status(str, Enum):
    ACTIVE = "active"
    CLOSED = "closed"


class TxKind(str, Enum):
    CREATE = "create"
    TASK = "task"


class ProcessSyntaxError(ValueError):
    """Raised for malformed definition text; carries a 1-based position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class DefinitionError(ValueError):
    """Raised when a parsed definition fails validation."""

    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class GuardError(LookupError):
    """A guard referenced a flag the state does not carry."""


# --- guard AST -------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: bool


@dataclass(frozen=True)
class Flag:
    name: str


@dataclass(frozen=True)
class Not:
    operand: GuardExpr


@dataclass(frozen=True)
class And:
    operands: tuple[GuardExpr, ...]


@dataclass(frozen=True)
class Or:
    operands: tuple[GuardExpr, ...]


GuardExpr = Union[Lit, Flag, Not, And, Or]

TRUE = Lit(True)


def guard_flags(expr: GuardExpr) -> Iterator[str]:
    """Yield every flag identifier referenced by ``expr``."""
    if isinstance(expr, Flag):
        yield expr.name
    elif isinstance(expr, Not):
        yield from guard_flags(expr.operand)
    elif isinstance(expr, (And, Or)):
        for op in expr.operands:
            yield from guard_flags(op)


def render_guard(expr: GuardExpr) -> str:
    """Render ``expr`` with the minimal parentheses the grammar needs."""
    return _render(expr, 0)


# binding strength: OR=1, AND=2, NOT/atoms=3
def _render(expr: GuardExpr, context: int) -> str:
    if isinstance(expr, Lit):
        return "true" if expr.value else "false"
    if isinstance(expr, Flag):
        return expr.name
    if isinstance(expr, Not):
        return "!" + _render(expr.operand, 3)
    if isinstance(expr, And):
        # nested ANDs are parenthesized so the n-ary shape survives a re-parse
        text = " & ".join(_render(op, 3 if isinstance(op, And) else 2) for op in expr.operands)
        return f"({text})" if context > 2 else text
    if isinstance(expr, Or):
        # ANDs under an OR keep their (redundant) parentheses for readability
        text = " | ".join(_render(op, 3) for op in expr.operands)
        return f"({text})" if context > 1 else text
    raise TypeError(f"not a guard expression: {expr!r}")


def evaluate_guard(guard: GuardExpr, state: FlagState | Mapping[str, bool]) -> bool:
    """Evaluate ``guard`` against the flag values in ``state``.

    Raises :class:`GuardError` if the guard names a flag ``state`` lacks.
    """
    if isinstance(guard, Lit):
        return guard.value
    if isinstance(guard, Flag):
        try:
            return bool(state[guard.name])
        except KeyError:
            raise GuardError(f"unknown flag {guard.name!r}") from None
    if isinstance(guard, Not):
        return not evaluate_guard(guard.operand, state)
    if isinstance(guard, And):
        return all(evaluate_guard(op, state) for op in guard.operands)
    if isinstance(guard, Or):
        return any(evaluate_guard(op, state) for op in guard.operands)
    raise TypeError(f"not a guard expression: {guard!r}")


# --- definitions -----------------------------------------------------------


@dataclass(frozen=True)
class TransactionDef:
    name: str
    actor: str
    kind: TxKind = TxKind.TASK
    guard: GuardExpr = TRUE
    closes: bool = False

    @property
    def effective_guard(self) -> GuardExpr:
        """Declared guard conjoined with the once-only condition."""
        if self.kind is TxKind.CREATE:
            return self.guard
        return And((self.guard, Not(Flag(self.name))))


@dataclass(frozen=True)
class ProcessDefinition:
    name: str
    parties: tuple[str, ...]
    transactions: tuple[TransactionDef, ...]

    @property
    def tasks(self) -> tuple[TransactionDef, ...]:
        return tuple(t for t in self.transactions if t.kind is TxKind.TASK)

    @property
    def flags(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tasks)

    @property
    def create(self) -> TransactionDef:
        for t in self.transactions:
            if t.kind is TxKind.CREATE:
                return t
        raise LookupError(f"process {self.name!r} has no create transaction")

    def transaction(self, name: str) -> TransactionDef:
        for t in self.transactions:
            if t.name == name:
                return t
        raise KeyError(name)

    def initial_state(self) -> FlagState:
        return FlagState.initial(self.flags)


class FlagState(Mapping[str, bool]):
    """Immutable, hashable flag valuation plus the instance status."""

    __slots__ = ("_flags", "status", "_hash")

    def __init__(self, flags: Mapping[str, bool], status: Status = Status.ACTIVE):
        self._flags = dict(flags)
        self.status = Status(status)
        self._hash = hash((frozenset(self._flags.items()), self.status))

    @classmethod
    def initial(cls, names: Iterable[str]) -> FlagState:
        return cls({n: False for n in names})

    def __getitem__(self, name: str) -> bool:
        return self._flags[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._flags)

    def __len__(self) -> int:
        return len(self._flags)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FlagState):
            return NotImplemented
        return self.status is other.status and self._flags == other._flags

    def __repr__(self) -> str:
        on = ",".join(n for n, v in self._flags.items() if v)
        return f"FlagState({self.status.value}; {on or '-'})"

    def with_flag(self, name: str, *, close: bool = False) -> FlagState:
        if name not in self._flags:
            raise GuardError(f"unknown flag {name!r}")
        flags = dict(self._flags)
        flags[name] = True
        return FlagState(flags, Status.CLOSED if close else self.status)

    @property
    def active(self) -> bool:
        return self.status is Status.ACTIVE


def enabled_transactions(defn: ProcessDefinition, state: FlagState) -> frozenset[str]:
    """Names of the task transactions that may commit in ``state``."""
    if set(state) != set(defn.flags):
        raise ValueError(
            f"flag set mismatch: state has {sorted(state)}, definition has {sorted(defn.flags)}"
        )
    if not state.active:
        return frozenset()
    return frozenset(t.name for t in defn.tasks if evaluate_guard(t.effective_guard, state))


def fire(defn: ProcessDefinition, state: FlagState, name: str) -> FlagState:
    """Successor state after task ``name`` commits. No enablement check."""
    return state.with_flag(name, close=defn.transaction(name).closes)


# --- validation ------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_definition(defn: ProcessDefinition) -> ValidationResult:
    out: list[Violation] = []
    parties = set()
    for p in defn.parties:
        if not p:
            out.append(Violation("empty party", "party role names must be non-empty"))
        elif p in parties:
            out.append(Violation("duplicate party", p))
        parties.add(p)

    names: set[str] = set()
    for t in defn.transactions:
        if t.name in names:
            out.append(Violation("duplicate transaction", t.name))
        names.add(t.name)
        if t.actor not in parties:
            out.append(Violation("unknown actor", f"{t.name} by {t.actor}"))

    flags = set(defn.flags)
    for clash in sorted((flags | parties) & RESERVED_FIELDS):
        out.append(Violation("reserved name", f"{clash} is a fixed asset field"))
    for clash in sorted(flags & parties):
        out.append(Violation("name clash", f"{clash} is both a party and a task"))
    for t in defn.transactions:
        for f in guard_flags(t.guard):
            if f not in flags:
                out.append(Violation("unknown flag", f"{f} in guard of {t.name}"))
        if t.kind is TxKind.CREATE and t.closes:
            out.append(Violation("create closes", t.name))

    creates = sum(1 for t in defn.transactions if t.kind is TxKind.CREATE)
    if creates != 1:
        out.append(Violation("create-count", f"expected exactly 1 create transaction, found {creates}"))
    return ValidationResult(tuple(out))


# --- text format -----------------------------------------------------------


class _Cursor:
    """Tokenizer over one line; columns are 1-based."""

    _TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|([!&|(),]))")

    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.tokens: list[tuple[str, int]] = []
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = self._TOKEN.match(text, pos)
            if not m:
                raise ProcessSyntaxError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
            self.tokens.append((m.group(1) or m.group(2), m.start(m.lastindex) + 1))
            pos = m.end()
        self.i = 0

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def column(self) -> int:
        if self.i < len(self.tokens):
            return self.tokens[self.i][1]
        return len(self.text.rstrip()) + 1

    def error(self, message: str) -> ProcessSyntaxError:
        return ProcessSyntaxError(message, self.lineno, self.column())

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of line")
        self.i += 1
        return tok

    def expect(self, word: str) -> None:
        col = self.column()
        tok = self.peek()
        if tok != word:
            found = "end of line" if tok is None else repr(tok)
            raise ProcessSyntaxError(f"expected {word!r}, found {found}", self.lineno, col)
        self.i += 1

    def ident(self, what: str) -> str:
        col = self.column()
        tok = self.peek()
        if tok is None or not _IDENT.fullmatch(tok) or tok in KEYWORDS:
            found = "end of line" if tok is None else repr(tok)
            raise ProcessSyntaxError(f"expected {what}, found {found}", self.lineno, col)
        self.i += 1
        return tok

    def at_end(self) -> bool:
        return self.i >= len(self.tokens)

    def end(self) -> None:
        if not self.at_end():
            raise self.error(f"unexpected {self.peek()!r}")

    # guard grammar: expr := term ('|' term)* ; term := factor ('&' factor)*
    def expr(self) -> GuardExpr:
        ops = [self.term()]
        while self.peek() == "|":
            self.i += 1
            ops.append(self.term())
        return ops[0] if len(ops) == 1 else Or(tuple(ops))

    def term(self) -> GuardExpr:
        ops = [self.factor()]
        while self.peek() == "&":
            self.i += 1
            ops.append(self.factor())
        return ops[0] if len(ops) == 1 else And(tuple(ops))

    def factor(self) -> GuardExpr:
        tok = self.peek()
        if tok == "!":
            self.i += 1
            return Not(self.factor())
        if tok == "(":
            self.i += 1
            inner = self.expr()
            self.expect(")")
            return inner
        if tok == "true":
            self.i += 1
            return Lit(True)
        if tok == "false":
            self.i += 1
            return Lit(False)
        return Flag(self.ident("flag name, literal, '!' or '('"))


def parse_guard(text: str) -> GuardExpr:
    """Parse a standalone guard expression (no flag declaration checks)."""
    cur = _Cursor(text, 1)
    expr = cur.expr()
    cur.end()
    return expr


def parse_process_definition(text: str) -> ProcessDefinition:
    """Parse and validate a definition document.

    Raises :class:`ProcessSyntaxError` on grammar errors and
    :class:`DefinitionError` when the result does not validate.
    """
    name: str | None = None
    parties: list[str] | None = None
    txs: list[TransactionDef] = []
    declared_at: dict[str, tuple[int, int]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        cur = _Cursor(line, lineno)
        head_col = cur.column()
        head = cur.next()
        if head == "process":
            if name is not None:
                raise ProcessSyntaxError("duplicate 'process' header", lineno, head_col)
            name = cur.ident("process name")
            cur.end()
        elif head == "parties":
            if parties is not None:
                raise ProcessSyntaxError("duplicate 'parties' line", lineno, head_col)
            parties = [cur.ident("party role")]
            while cur.peek() == ",":
                cur.i += 1
                parties.append(cur.ident("party role"))
            cur.end()
        elif head in ("create", "task"):
            if name is None or parties is None:
                raise ProcessSyntaxError("transactions must follow 'process' and 'parties'", lineno, head_col)
            tcol = cur.column()
            tname = cur.ident("transaction name")
            if tname in declared_at:
                first = declared_at[tname][0]
                raise ProcessSyntaxError(f"duplicate transaction {tname!r} (first on line {first})", lineno, tcol)
            declared_at[tname] = (lineno, tcol)
            cur.expect("by")
            acol = cur.column()
            actor = cur.ident("party role")
            if actor not in parties:
                raise ProcessSyntaxError(f"undeclared party {actor!r}", lineno, acol)
            if head == "create":
                cur.end()
                txs.append(TransactionDef(tname, actor, TxKind.CREATE))
                continue
            cur.expect("when")
            # a trailing 'closes' keyword is not part of the guard
            closes = bool(cur.tokens) and cur.tokens[-1][0] == "closes"
            if closes:
                cur.tokens.pop()
            guard = cur.expr()
            cur.end()
            txs.append(TransactionDef(tname, actor, TxKind.TASK, guard, closes))
        else:
            raise ProcessSyntaxError(f"unknown statement {head!r}", lineno, head_col)

    if name is None:
        raise ProcessSyntaxError("missing 'process' header", 1, 1)
    if parties is None:
        raise ProcessSyntaxError("missing 'parties' line", 1, 1)

    defn = ProcessDefinition(name, tuple(parties), tuple(txs))
    flags = set(defn.flags)
    for t in defn.tasks:
        for f in guard_flags(t.guard):
            if f not in flags:
                line, col = declared_at[t.name]
                raise ProcessSyntaxError(f"undeclared flag {f!r} in guard of {t.name}", line, col)
    result = validate_definition(defn)
    if not result.ok:
        raise DefinitionError(list(result.violations))
    return defn


def render_definition(defn: ProcessDefinition) -> str:
    """Inverse of :func:`parse_process_definition`."""
    lines = [f"process {defn.name}", "parties " + ", ".join(defn.parties)]
    for t in defn.transactions:
        if t.kind is TxKind.CREATE:
            lines.append(f"create {t.name} by {t.actor}")
        else:
            line = f"task {t.name} by {t.actor} when {render_guard(t.guard)}"
            lines.append(line + " closes" if t.closes else line)
    return "\n".join(lines) + "\n"


ORDER_PROCESSING = """\
# Order Processing: customer (shopper), manufacturer (seller), logistics (delivery).
# Flag names normalize two spellings of the original asset table:
#   recieveOrder -> receiveOrder, sendInvioce -> sendInvoice.
process OrderProcessing
parties shopper, seller, delivery
create createOrder by shopper
task receiveOrder by seller when true
task accepted by seller when receiveOrder & !rejected
task rejected by seller when receiveOrder & !accepted
task fillOrder by seller when accepted
task sendInvoice by seller when fillOrder
task makePayment by shopper when sendInvoice
task acceptPayment by seller when makePayment
task shipOrder by delivery when fillOrder
task closeOrder by seller when rejected | (acceptPayment & shipOrder) closes
"""

_builtin: ProcessDefinition | None = None


def builtin_order_processing() -> ProcessDefinition:
    global _builtin
    if _builtin is None:
        _builtin = parse_process_definition(ORDER_PROCESSING)
    return _builtin
