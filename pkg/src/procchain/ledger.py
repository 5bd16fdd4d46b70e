"""Append-only, SHA-256 hash-chained ledger of transaction records.

Every structure is hashed over its canonical encoding: JSON with sorted keys,
no insignificant whitespace, UTF-8. The on-disk form is a header line
followed by one canonical block per line.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

from .model import Reason, Request, TransactionOutcome, Verdict, request_from_dict
from .process import Status

HEADER = "procchain-ledger v1"
GENESIS_PREV = "0" * 64


def canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def digest(obj: Any) -> str:
    return hashlib.sha256(canonical(obj)).hexdigest()


class LedgerError(Exception):
    """Invalid append (sequence gap or duplicate)."""


class LedgerFormatError(LedgerError):
    """A ledger file could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TxRecord:
    seq: int
    request: Request
    verdict: Verdict
    reason: Reason | None = None
    resulting_status: Status | None = None

    @property
    def outcome(self) -> TransactionOutcome:
        return TransactionOutcome(self.verdict, self.reason)

    @property
    def committed(self) -> bool:
        return self.verdict is Verdict.COMMITTED

    @cached_property
    def encoded(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "request": self.request.to_dict(),
            "verdict": self.verdict.value,
            "reason": None if self.reason is None else self.reason.value,
            "resultingAssetStatus": None if self.resulting_status is None else self.resulting_status.value,
        }

    def to_dict(self) -> dict[str, Any]:
        return self.encoded

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TxRecord:
        status = d["resultingAssetStatus"]
        reason = d["reason"]
        seq = d["seq"]
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ValueError(f"seq must be an integer, got {seq!r}")
        return cls(
            seq,
            request_from_dict(d["request"]),
            Verdict(d["verdict"]),
            None if reason is None else Reason(reason),
            None if status is None else Status(status),
        )


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    records: tuple[TxRecord, ...]
    hash: str

    @staticmethod
    def body(index: int, prev_hash: str, records: Iterable[TxRecord]) -> dict[str, Any]:
        return {"index": index, "prevHash": prev_hash, "records": [r.encoded for r in records]}

    @classmethod
    def seal(cls, index: int, prev_hash: str, records: Sequence[TxRecord]) -> Block:
        records = tuple(records)
        return cls(index, prev_hash, records, digest(cls.body(index, prev_hash, records)))

    def computed_hash(self) -> str:
        return digest(self.body(self.index, self.prev_hash, self.records))

    def to_dict(self) -> dict[str, Any]:
        d = self.body(self.index, self.prev_hash, self.records)
        d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Block:
        if set(d) != {"index", "prevHash", "records", "hash"}:
            raise ValueError(f"unexpected block fields {sorted(d)}")
        return cls(d["index"], d["prevHash"], tuple(TxRecord.from_dict(r) for r in d["records"]), d["hash"])


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    @property
    def head_hash(self) -> str:
        return self.blocks[-1].hash if self.blocks else GENESIS_PREV

    @property
    def next_seq(self) -> int:
        for block in reversed(self.blocks):
            if block.records:
                return block.records[-1].seq + 1
        return 0

    def records(self) -> Iterator[TxRecord]:
        for block in self.blocks:
            yield from block.records


def append(chain: Chain, records: Sequence[TxRecord], batch_size: int = 1) -> Chain:
    """Return ``chain`` extended by ``records`` sealed into blocks of at most ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    expected = chain.next_seq
    for r in records:
        if r.seq != expected:
            kind = "duplicate" if r.seq < expected else "gap"
            raise LedgerError(f"sequence {kind}: expected seq {expected}, got {r.seq}")
        expected += 1
    blocks = list(chain.blocks)
    prev = chain.head_hash
    for start in range(0, len(records), batch_size):
        block = Block.seal(len(blocks), prev, records[start:start + batch_size])
        blocks.append(block)
        prev = block.hash
    return Chain(tuple(blocks))


# --- verification ----------------------------------------------------------


class ViolationKind(str, Enum):
    HASH_MISMATCH = "HASH_MISMATCH"
    LINK_BROKEN = "LINK_BROKEN"
    SEQ_GAP = "SEQ_GAP"


@dataclass(frozen=True)
class ChainViolation:
    index: int
    kind: ViolationKind
    detail: str = ""

    def __str__(self) -> str:
        return f"block {self.index}: {self.kind.value}" + (f" ({self.detail})" if self.detail else "")


def _check_block(block: Block, position: int, prev_hash: str, next_seq: int) -> ChainViolation | None:
    if block.computed_hash() != block.hash:
        return ChainViolation(position, ViolationKind.HASH_MISMATCH, "stored hash does not match contents")
    if block.index != position:
        return ChainViolation(position, ViolationKind.LINK_BROKEN, f"index {block.index} at position {position}")
    if block.prev_hash != prev_hash:
        return ChainViolation(position, ViolationKind.LINK_BROKEN, "prevHash does not match predecessor")
    for r in block.records:
        if r.seq != next_seq:
            return ChainViolation(position, ViolationKind.SEQ_GAP, f"expected seq {next_seq}, found {r.seq}")
        next_seq += 1
    return None


def verify_chain(chain: Chain) -> ChainViolation | None:
    """Return the first violation in ``chain``, or ``None`` when it is intact."""
    prev, seq = GENESIS_PREV, 0
    for position, block in enumerate(chain.blocks):
        bad = _check_block(block, position, prev, seq)
        if bad:
            return bad
        prev = block.hash
        seq += len(block.records)
    return None


def _block_lines(data: bytes) -> tuple[bytes, list[bytes | None]]:
    header, sep, rest = data.partition(b"\n")
    if not sep:
        raise LedgerFormatError("missing header line", 1)
    if header.decode("utf-8", "replace") != HEADER:
        raise LedgerFormatError(f"bad header {header[:40]!r}", 1)
    lines: list[bytes | None] = list(rest.split(b"\n"))
    if lines[-1] == b"":
        lines.pop()
    else:
        # every block line, including the last, ends with a newline
        lines[-1] = None
    return header, lines


def _decode_line(line: bytes) -> Block:
    block = Block.from_dict(json.loads(line.decode("utf-8")))
    if canonical(block.to_dict()) != line:
        raise ValueError("line is not in canonical form")
    return block


_HASH_PREFIX = b'{"hash":"'
_BODY_AT = len(_HASH_PREFIX) + 64 + 2  # past the digest and its closing '",'


def _raw_block(line: bytes) -> tuple[str, bytes]:
    """Split a canonical block line into (stored hash, canonical body bytes).

    Keys are sorted, so ``hash`` always leads and the body is the line with
    that member cut out.
    """
    if not line.startswith(_HASH_PREFIX) or line[_BODY_AT - 2:_BODY_AT] != b'",':
        raise ValueError("line does not start with a hash member")
    return line[len(_HASH_PREFIX):_BODY_AT - 2].decode("ascii"), b"{" + line[_BODY_AT:]


def verify_bytes(data: bytes) -> ChainViolation | None:
    """Verify a persisted ledger directly from its bytes.

    Each block's hash is recomputed over its bytes exactly as stored, so any
    change to a block line is reported at that block. Undecodable lines are
    reported as violations rather than raised, unlike :func:`load`.
    """
    _, lines = _block_lines(data)
    prev, seq = GENESIS_PREV, 0
    for position, line in enumerate(lines):
        if line is None:
            return ChainViolation(position, ViolationKind.HASH_MISMATCH, "truncated final line")
        try:
            stored, body = _raw_block(line)
        except (ValueError, UnicodeDecodeError) as exc:
            return ChainViolation(position, ViolationKind.HASH_MISMATCH, f"undecodable block: {exc}")
        if hashlib.sha256(body).hexdigest() != stored:
            return ChainViolation(position, ViolationKind.HASH_MISMATCH, "stored hash does not match contents")
        try:
            d = json.loads(body)
            index, prev_hash = d["index"], d["prevHash"]
            seqs = [r["seq"] for r in d["records"]]
        except (ValueError, KeyError, TypeError) as exc:
            return ChainViolation(position, ViolationKind.HASH_MISMATCH, f"undecodable block: {exc}")
        if index != position:
            return ChainViolation(position, ViolationKind.LINK_BROKEN, f"index {index} at position {position}")
        if prev_hash != prev:
            return ChainViolation(position, ViolationKind.LINK_BROKEN, "prevHash does not match predecessor")
        for found in seqs:
            if found != seq:
                return ChainViolation(position, ViolationKind.SEQ_GAP, f"expected seq {seq}, found {found}")
            seq += 1
        prev = stored
    return None


def verify_file(path: str | os.PathLike[str]) -> ChainViolation | None:
    return verify_bytes(Path(path).read_bytes())


# --- persistence -----------------------------------------------------------


def dumps(chain: Chain) -> bytes:
    parts = [HEADER.encode("utf-8"), b"\n"]
    for block in chain.blocks:
        parts.append(canonical(block.to_dict()))
        parts.append(b"\n")
    return b"".join(parts)


def loads(data: bytes) -> Chain:
    _, lines = _block_lines(data)
    blocks = []
    for n, line in enumerate(lines, start=2):
        if line is None:
            raise LedgerFormatError("truncated final line (no newline)", n)
        try:
            blocks.append(_decode_line(line))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise LedgerFormatError(f"malformed block: {exc}", n) from exc
    return Chain(tuple(blocks))


def persist(chain: Chain, path: str | os.PathLike[str]) -> None:
    """Atomically write ``chain`` to ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(dumps(chain))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | os.PathLike[str]) -> Chain:
    return loads(Path(path).read_bytes())


# --- replay ----------------------------------------------------------------


class ReplayError(LedgerError):
    """A recorded verdict disagrees with re-validation."""


def replay(chain: Chain, defn, policy=None):
    """Re-execute every record and return the resulting world state.

    Raises :class:`ReplayError` as soon as a recorded verdict or reason
    differs from what the engine decides now.
    """
    from .engine import Engine

    engine = Engine(defn, policy, record=False)
    for rec in chain.records():
        outcome = engine.apply(rec.request)
        if (outcome.verdict, outcome.reason) != (rec.verdict, rec.reason):
            raise ReplayError(
                f"seq {rec.seq}: ledger says {rec.outcome}, re-validation gives {outcome.verdict.value}"
                + (f" {outcome.reason.value}" if outcome.reason else "")
            )
    return engine.state
