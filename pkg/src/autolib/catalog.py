"""Book identity, bibliographic data, sort keys, and the transaction log.

The catalog is the in-memory "library database": records keyed by barcode,
each carrying a lifecycle state. Every state change flows through an
append-only transaction log, and replaying that log from scratch rebuilds
the live states exactly (event-sourced recovery).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import LibraryError

BARCODE_LENGTH = 13

# Separator for composite sort keys: the unit separator control character
# sorts below every printable code point, so composite keys compare
# field-by-field.
KEY_SEPARATOR = "\x1f"

LEADING_ARTICLES = ("the", "a", "an")


class BarcodeError(LibraryError):
    code = "BarcodeError"


class BadLength(BarcodeError):
    code = "BadLength"


class NonDigit(BarcodeError):
    code = "NonDigit"


class ChecksumMismatch(BarcodeError):
    code = "ChecksumMismatch"


class DuplicateBarcodeOnInsertOnly(LibraryError):
    code = "DuplicateBarcodeOnInsertOnly"


class SeqGap(LibraryError):
    code = "SeqGap"


def checksum_digit(digits12: str) -> int:
    """Check digit for a 12-digit prefix: weight 1 at odd positions and 3 at
    even positions (1-based), then take the tens' complement of the sum."""
    total = 0
    for i, ch in enumerate(digits12):
        weight = 1 if i % 2 == 0 else 3
        total += weight * int(ch)
    return (10 - total % 10) % 10


def validate_barcode(raw: str) -> str:
    """Validate a scanned barcode string and return it in canonical form.

    Checks run in order: length, digits, checksum; the first failure is
    raised as its own exception type.
    """
    if len(raw) != BARCODE_LENGTH:
        raise BadLength(f"barcode must be {BARCODE_LENGTH} digits, got {len(raw)}")
    if not raw.isascii() or not raw.isdigit():
        raise NonDigit("barcode must contain only decimal digits")
    if checksum_digit(raw[:12]) != int(raw[12]):
        raise ChecksumMismatch(f"check digit {raw[12]} does not match prefix")
    return raw


def is_valid_barcode(raw: str) -> bool:
    try:
        validate_barcode(raw)
        return True
    except BarcodeError:
        return False


def normalize(text: str) -> str:
    """Normalize text for keys and matching.

    Case folds code point by code point, drops non-whitespace control
    characters (so the key separator stays below all content), then
    collapses whitespace runs to single spaces and trims.
    """
    lowered = text.lower()
    cleaned = "".join(ch for ch in lowered if ch >= " " or ch.isspace())
    return " ".join(cleaned.split())


def _strip_article(value: str) -> str:
    head, _, rest = value.partition(" ")
    if rest and head in LEADING_ARTICLES:
        return rest
    return value


@dataclass(frozen=True)
class SortPolicy:
    """Which bibliographic fields participate in the shelf order, and in
    what precedence."""

    fields: tuple[str, ...] = ("genre", "author", "title")
    strip_leading_articles: bool = False

    def __post_init__(self):
        if not self.fields:
            raise LibraryError("sort policy needs at least one field")
        if len(set(self.fields)) != len(self.fields):
            raise LibraryError("sort policy fields must be unique")
        for f in self.fields:
            if f not in ("genre", "author", "title"):
                raise LibraryError(f"unknown sort field {f!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SortPolicy":
        return cls(
            fields=tuple(doc.get("fields", ("genre", "author", "title"))),
            strip_leading_articles=bool(doc.get("strip_leading_articles", False)),
        )


@dataclass(frozen=True)
class ShelfAddress:
    """rack (1-based), level (0 = bottom), slot (0-based)."""

    rack: int
    level: int
    slot: int

    def to_json(self) -> dict:
        return {"rack": self.rack, "level": self.level, "slot": self.slot}

    @classmethod
    def from_json(cls, doc: dict) -> "ShelfAddress":
        return cls(rack=int(doc["rack"]), level=int(doc["level"]), slot=int(doc["slot"]))

    def key(self) -> tuple[int, int, int]:
        return (self.rack, self.level, self.slot)


# Valid lifecycle state kinds, in no particular order.
STATE_KINDS = (
    "AtIntake",
    "Queued",
    "InTransit",
    "Shelved",
    "AtKiosk",
    "ManualHandling",
)


@dataclass(frozen=True)
class BookState:
    """Tagged lifecycle state; exactly one kind with its payload."""

    kind: str
    task_id: Optional[int] = None
    arm_id: Optional[int] = None
    address: Optional[ShelfAddress] = None
    kiosk_id: Optional[str] = None

    def __post_init__(self):
        if self.kind not in STATE_KINDS:
            raise LibraryError(f"unknown book state {self.kind!r}")

    @classmethod
    def at_intake(cls) -> "BookState":
        return cls("AtIntake")

    @classmethod
    def queued(cls, task_id: int) -> "BookState":
        return cls("Queued", task_id=task_id)

    @classmethod
    def in_transit(cls, arm_id: int) -> "BookState":
        return cls("InTransit", arm_id=arm_id)

    @classmethod
    def shelved(cls, address: ShelfAddress) -> "BookState":
        return cls("Shelved", address=address)

    @classmethod
    def at_kiosk(cls, kiosk_id: str) -> "BookState":
        return cls("AtKiosk", kiosk_id=kiosk_id)

    @classmethod
    def manual_handling(cls) -> "BookState":
        return cls("ManualHandling")

    def to_json(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.task_id is not None:
            doc["task_id"] = self.task_id
        if self.arm_id is not None:
            doc["arm_id"] = self.arm_id
        if self.address is not None:
            doc["address"] = self.address.to_json()
        if self.kiosk_id is not None:
            doc["kiosk_id"] = self.kiosk_id
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "BookState":
        addr = doc.get("address")
        return cls(
            kind=doc["kind"],
            task_id=doc.get("task_id"),
            arm_id=doc.get("arm_id"),
            address=ShelfAddress.from_json(addr) if addr else None,
            kiosk_id=doc.get("kiosk_id"),
        )


@dataclass(frozen=True)
class BookRecord:
    barcode: str
    title: str
    author: str
    genre: str
    width_mm: int
    state: BookState = field(default_factory=BookState.at_intake)

    def __post_init__(self):
        validate_barcode(self.barcode)
        if self.width_mm < 1:
            raise LibraryError("width_mm must be >= 1")

    def with_state(self, state: BookState) -> "BookRecord":
        return replace(self, state=state)

    def to_json(self) -> dict:
        return {
            "barcode": self.barcode,
            "title": self.title,
            "author": self.author,
            "genre": self.genre,
            "width_mm": self.width_mm,
            "state": self.state.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BookRecord":
        state = doc.get("state")
        return cls(
            barcode=doc["barcode"],
            title=doc.get("title", ""),
            author=doc.get("author", ""),
            genre=doc.get("genre", ""),
            width_mm=int(doc["width_mm"]),
            state=BookState.from_json(state) if state else BookState.at_intake(),
        )


def sort_key(record: BookRecord, policy: SortPolicy) -> str:
    """Composite shelf-order key: normalized policy fields joined by the
    unit separator. Total function; empty fields are allowed."""
    parts = []
    for name in policy.fields:
        value = normalize(getattr(record, name))
        if policy.strip_leading_articles:
            value = _strip_article(value)
        parts.append(value)
    return KEY_SEPARATOR.join(parts)


class Catalog:
    """In-memory record store keyed by barcode."""

    def __init__(self, policy: SortPolicy | None = None):
        self.policy = policy or SortPolicy()
        self._records: dict[str, BookRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, barcode: str) -> bool:
        return barcode in self._records

    def get(self, barcode: str) -> Optional[BookRecord]:
        return self._records.get(barcode)

    def upsert(self, record: BookRecord, insert_only: bool = False) -> None:
        if insert_only and record.barcode in self._records:
            raise DuplicateBarcodeOnInsertOnly(record.barcode)
        self._records[record.barcode] = record

    def set_state(self, barcode: str, state: BookState) -> BookRecord:
        record = self._records[barcode].with_state(state)
        self._records[barcode] = record
        return record

    def records(self) -> list[BookRecord]:
        return sorted(
            self._records.values(),
            key=lambda r: (sort_key(r, self.policy), r.barcode),
        )

    def query(
        self,
        title: str = "",
        author: str = "",
        genre: str = "",
        barcode: str = "",
    ) -> list[BookRecord]:
        """All records whose normalized fields contain the normalized query
        substrings, in shelf order."""
        want = {
            "title": normalize(title),
            "author": normalize(author),
            "genre": normalize(genre),
        }
        out = []
        for record in self.records():
            if barcode and record.barcode != barcode:
                continue
            if all(not q or q in normalize(getattr(record, f)) for f, q in want.items()):
                out.append(record)
        return out

    def states(self) -> dict[str, BookState]:
        return {b: r.state for b, r in self._records.items()}

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json(), sort_keys=True, separators=(",", ":")) + "\n"
            for r in self.records()
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, policy: SortPolicy | None = None) -> "Catalog":
        catalog = cls(policy)
        text = Path(path).read_text(encoding="utf-8")
        for line in text.splitlines():
            if line.strip():
                catalog.upsert(BookRecord.from_json(json.loads(line)))
        return catalog


# Transaction kinds that may appear in the log.
TRANSACTION_KINDS = (
    "ReturnAccepted",
    "Shelved",
    "RetrievalRequested",
    "Picked",
    "Delivered",
    "TaskFailed",
)


@dataclass(frozen=True)
class TransactionEntry:
    seq: int
    time_ms: int
    kind: str
    barcode: str
    address: Optional[ShelfAddress] = None
    arm_id: Optional[int] = None
    task_id: Optional[int] = None
    kiosk_id: Optional[str] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.kind not in TRANSACTION_KINDS:
            raise LibraryError(f"unknown transaction kind {self.kind!r}")

    def to_json(self) -> dict:
        doc: dict = {
            "seq": self.seq,
            "time_ms": self.time_ms,
            "kind": self.kind,
            "barcode": self.barcode,
        }
        if self.address is not None:
            doc["address"] = self.address.to_json()
        if self.arm_id is not None:
            doc["arm_id"] = self.arm_id
        if self.task_id is not None:
            doc["task_id"] = self.task_id
        if self.kiosk_id is not None:
            doc["kiosk_id"] = self.kiosk_id
        if self.reason is not None:
            doc["reason"] = self.reason
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TransactionEntry":
        addr = doc.get("address")
        return cls(
            seq=int(doc["seq"]),
            time_ms=int(doc["time_ms"]),
            kind=doc["kind"],
            barcode=doc["barcode"],
            address=ShelfAddress.from_json(addr) if addr else None,
            arm_id=doc.get("arm_id"),
            task_id=doc.get("task_id"),
            kiosk_id=doc.get("kiosk_id"),
            reason=doc.get("reason"),
        )


# Physical failure reasons flip the book to manual handling on replay;
# rejected submissions never reach the log at all.
MANUAL_HANDLING_REASONS = ("GripFailure", "MissedBeacon", "NoEligibleLevel", "ShelfFull")


def apply_entry(states: dict[str, BookState], entry: TransactionEntry) -> None:
    """Fold one transaction entry into a barcode -> state mapping."""
    if entry.kind == "ReturnAccepted":
        states[entry.barcode] = BookState.queued(entry.task_id)
    elif entry.kind == "RetrievalRequested":
        states[entry.barcode] = BookState.queued(entry.task_id)
    elif entry.kind == "Picked":
        states[entry.barcode] = BookState.in_transit(entry.arm_id)
    elif entry.kind == "Shelved":
        states[entry.barcode] = BookState.shelved(entry.address)
    elif entry.kind == "Delivered":
        states[entry.barcode] = BookState.at_kiosk(entry.kiosk_id)
    elif entry.kind == "TaskFailed":
        states[entry.barcode] = BookState.manual_handling()


class TransactionLog:
    """Append-only, contiguously numbered record of catalog changes."""

    def __init__(self):
        self._entries: list[TransactionEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[TransactionEntry]:
        return iter(self._entries)

    @property
    def last_seq(self) -> int:
        return self._entries[-1].seq if self._entries else 0

    def append(self, entry: TransactionEntry) -> None:
        if entry.seq != self.last_seq + 1:
            raise SeqGap(f"expected seq {self.last_seq + 1}, got {entry.seq}")
        if self._entries and entry.time_ms < self._entries[-1].time_ms:
            raise LibraryError("transaction time went backwards")
        self._entries.append(entry)

    def record(self, time_ms: int, kind: str, barcode: str, **fields) -> TransactionEntry:
        entry = TransactionEntry(
            seq=self.last_seq + 1, time_ms=time_ms, kind=kind, barcode=barcode, **fields
        )
        self.append(entry)
        return entry

    def entries(self) -> list[TransactionEntry]:
        return list(self._entries)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) + "\n"
            for e in self._entries
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TransactionLog":
        log = cls()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                log.append(TransactionEntry.from_json(json.loads(line)))
        return log


def replay(entries: Iterable[TransactionEntry]) -> dict[str, BookState]:
    """Rebuild live book states from a transaction log alone."""
    states: dict[str, BookState] = {}
    for entry in entries:
        apply_entry(states, entry)
    return states
