"""Data model and on-disk layout of NTF ("ntuple file") files.

An NTF file is a 24-byte header, a sequence of basket records and a JSON
footer that carries the schema and the basket index::

    header   magic "NTF1" | version u16 | flags u16 | footer_offset u64 | footer_length u64
    basket   codec u8 | uncompressed_size u32 | compressed_size u32 | crc32 u32 | payload
    footer   UTF-8 JSON document | crc32 u32 of the JSON bytes

All integers are little-endian. ``footer_length`` counts the JSON bytes plus
the trailing checksum. Basket checksums cover the uncompressed payload.
A VarF32 payload is ``u32 value_count``, ``event_count + 1`` u32 offsets
(starting at 0) and then the float32 values.
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from ..errors import CorruptionError, FormatError, SchemaError

MAGIC = b"NTF1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = HEADER.size  # 24
RECORD = struct.Struct("<BIII")
RECORD_SIZE = RECORD.size  # 13
FOOTER_CRC_SIZE = 4
DEFAULT_BASKET_BYTES = 65536

CODEC_NONE = 0
CODEC_DEFLATE = 1


class BranchType(enum.Enum):
    F32 = "F32"
    F64 = "F64"
    I32 = "I32"
    I64 = "I64"
    VarF32 = "VarF32"

    @property
    def dtype(self) -> np.dtype:
        return _DTYPES[self]

    @property
    def is_var(self) -> bool:
        return self is BranchType.VarF32

    @classmethod
    def parse(cls, value: BranchType | str) -> BranchType:
        if isinstance(value, BranchType):
            return value
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(t.value for t in cls)
            raise SchemaError(f"unknown branch type {value!r} (expected one of {choices})") from None


_DTYPES = {
    BranchType.F32: np.dtype("<f4"),
    BranchType.F64: np.dtype("<f8"),
    BranchType.I32: np.dtype("<i4"),
    BranchType.I64: np.dtype("<i8"),
    BranchType.VarF32: np.dtype("<f4"),
}


@dataclass(frozen=True)
class BasketRef:
    file_offset: int
    compressed_size: int
    uncompressed_size: int
    event_count: int
    checksum: int

    @property
    def record_size(self) -> int:
        return RECORD_SIZE + self.compressed_size

    def to_json(self) -> dict:
        return {
            "offset": self.file_offset,
            "csize": self.compressed_size,
            "usize": self.uncompressed_size,
            "events": self.event_count,
            "crc32": self.checksum,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> BasketRef:
        return cls(doc["offset"], doc["csize"], doc["usize"], doc["events"], doc["crc32"])


@dataclass(frozen=True)
class BranchDescriptor:
    name: str
    branch_type: BranchType
    baskets: tuple[BasketRef, ...] = ()

    @property
    def stored_bytes(self) -> int:
        """Bytes occupied on disk by this branch's basket records."""
        return sum(b.record_size for b in self.baskets)


@dataclass(frozen=True)
class Schema:
    branches: tuple[BranchDescriptor, ...]
    event_count: int = 0

    @classmethod
    def declare(cls, branches: Mapping[str, BranchType | str] | Iterable[tuple[str, BranchType | str]]) -> Schema:
        """Build a basket-less schema from ``{name: type}`` or ``[(name, type), ...]``."""
        items = branches.items() if isinstance(branches, Mapping) else branches
        schema = cls(tuple(BranchDescriptor(str(n), BranchType.parse(t)) for n, t in items))
        schema.check_names()
        return schema

    def check_names(self) -> None:
        if not self.branches:
            raise SchemaError("schema has no branches")
        seen = set()
        for b in self.branches:
            if not b.name:
                raise SchemaError("branch names must be non-empty")
            if b.name in seen:
                raise SchemaError(f"duplicate branch name {b.name!r}")
            seen.add(b.name)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.branches]

    @property
    def types(self) -> dict[str, BranchType]:
        return {b.name: b.branch_type for b in self.branches}

    @property
    def basket_count(self) -> int:
        return len(self.branches[0].baskets) if self.branches else 0

    def branch(self, name: str) -> BranchDescriptor:
        for b in self.branches:
            if b.name == name:
                return b
        raise SchemaError(f"unknown branch {name!r} (have {', '.join(self.names)})")

    def require(self, names: Iterable[str]) -> list[BranchDescriptor]:
        return [self.branch(n) for n in names]

    def without_baskets(self) -> Schema:
        return Schema(tuple(BranchDescriptor(b.name, b.branch_type) for b in self.branches))

    def subset(self, names: Sequence[str]) -> Schema:
        return Schema(tuple(self.branch(n) for n in names), self.event_count)

    def basket_event_counts(self) -> list[int]:
        return [b.event_count for b in self.branches[0].baskets] if self.branches else []

    def basket_starts(self) -> list[int]:
        starts, pos = [], 0
        for n in self.basket_event_counts():
            starts.append(pos)
            pos += n
        return starts

    def equivalent(self, other: Schema) -> bool:
        """Same names, types and order; baskets and counts ignored."""
        return [(b.name, b.branch_type) for b in self.branches] == [
            (b.name, b.branch_type) for b in other.branches
        ]

    def validate(self) -> None:
        """Check the invariants a reader relies on; raises :class:`FormatError`."""
        try:
            self.check_names()
        except SchemaError as exc:
            raise FormatError(f"invalid footer: {exc}") from None
        counts = self.basket_event_counts()
        for b in self.branches:
            if [r.event_count for r in b.baskets] != counts:
                raise FormatError(f"invalid footer: baskets of branch {b.name!r} are not row-aligned")
        if sum(counts) != self.event_count:
            raise FormatError(
                f"invalid footer: basket event counts sum to {sum(counts)}, expected {self.event_count}"
            )

    # footer document

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "event_count": self.event_count,
            "branches": [
                {"name": b.name, "type": b.branch_type.value, "baskets": [r.to_json() for r in b.baskets]}
                for b in self.branches
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> Schema:
        try:
            branches = tuple(
                BranchDescriptor(
                    d["name"],
                    BranchType(d["type"]),
                    tuple(BasketRef.from_json(r) for r in d["baskets"]),
                )
                for d in doc["branches"]
            )
            return cls(branches, int(doc["event_count"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid footer document: {exc!r}") from None


def encode_footer(schema: Schema) -> bytes:
    body = json.dumps(schema.to_json(), separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return body + struct.pack("<I", zlib.crc32(body))


def decode_footer(raw: bytes) -> Schema:
    if len(raw) < FOOTER_CRC_SIZE:
        raise FormatError("footer too short")
    body, (crc,) = raw[:-FOOTER_CRC_SIZE], struct.unpack("<I", raw[-FOOTER_CRC_SIZE:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("footer checksum mismatch")
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"footer is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise FormatError("footer is not a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported footer version {doc.get('version')!r}")
    schema = Schema.from_json(doc)
    schema.validate()
    return schema


class VarColumn:
    """Jagged float32 column: ``values[offsets[i]:offsets[i+1]]`` is row ``i``."""

    __slots__ = ("offsets", "values")

    def __init__(self, offsets: np.ndarray, values: np.ndarray):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.values = np.asarray(values, dtype="<f4")

    @classmethod
    def from_lists(cls, rows: Iterable[Sequence[float]]) -> VarColumn:
        arrays = [np.asarray(r, dtype="<f4").reshape(-1) for r in rows]
        lengths = np.fromiter((len(a) for a in arrays), dtype=np.int64, count=len(arrays))
        offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        values = np.concatenate(arrays) if arrays else np.zeros(0, dtype="<f4")
        return cls(offsets, values.astype("<f4", copy=False))

    @classmethod
    def empty(cls) -> VarColumn:
        return cls(np.zeros(1, dtype=np.int64), np.zeros(0, dtype="<f4"))

    @classmethod
    def concat(cls, parts: Sequence[VarColumn]) -> VarColumn:
        if not parts:
            return cls.empty()
        lengths = np.concatenate([p.lengths() for p in parts])
        offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        values = np.concatenate([p.values[p.offsets[0]:p.offsets[-1]] for p in parts])
        return cls(offsets, values)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i]:self.offsets[i + 1]]

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VarColumn):
            return NotImplemented
        return np.array_equal(self.lengths(), other.lengths()) and np.array_equal(
            self.flat_values().view("<u4"), other.flat_values().view("<u4")
        )

    def __repr__(self) -> str:
        return f"VarColumn(rows={len(self)}, values={len(self.flat_values())})"

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def flat_values(self) -> np.ndarray:
        return self.values[self.offsets[0]:self.offsets[-1]]

    def slice(self, start: int, stop: int) -> VarColumn:
        return VarColumn(self.offsets[start:stop + 1] - self.offsets[start],
                         self.values[self.offsets[start]:self.offsets[stop]])

    def filter(self, mask: np.ndarray) -> VarColumn:
        if mask.all():
            return self
        lengths = self.lengths()
        per_value = np.repeat(mask, lengths)
        kept = lengths[mask]
        offsets = np.zeros(len(kept) + 1, dtype=np.int64)
        np.cumsum(kept, out=offsets[1:])
        return VarColumn(offsets, self.flat_values()[per_value])

    def to_lists(self) -> list[list[float]]:
        return [self[i].tolist() for i in range(len(self))]


Column = Union[np.ndarray, VarColumn]


@dataclass
class EventBatch:
    """A row range of events restricted to some branches."""

    columns: dict[str, Column]
    row_count: int
    first_row: int = 0
    types: dict[str, BranchType] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def __len__(self) -> int:
        return self.row_count

    def row(self, i: int) -> dict:
        """One event as a plain mapping (scalars as Python numbers, arrays as ndarrays)."""
        out = {}
        for name, col in self.columns.items():
            out[name] = col[i] if isinstance(col, VarColumn) else col[i].item()
        return out

    def rows(self) -> Iterator[dict]:
        for i in range(self.row_count):
            yield self.row(i)

    def filter(self, mask: np.ndarray) -> EventBatch:
        cols = {n: (c.filter(mask) if isinstance(c, VarColumn) else c[mask]) for n, c in self.columns.items()}
        return EventBatch(cols, int(np.count_nonzero(mask)), self.first_row, self.types)

    def slice(self, start: int, stop: int) -> EventBatch:
        stop = min(stop, self.row_count)
        cols = {n: (c.slice(start, stop) if isinstance(c, VarColumn) else c[start:stop])
                for n, c in self.columns.items()}
        return EventBatch(cols, stop - start, self.first_row + start, self.types)
