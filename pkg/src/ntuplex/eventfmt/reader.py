"""Schema inference, basket decoding and selective event reads."""

from __future__ import annotations

import struct
import zlib
from typing import Iterator, Sequence

import numpy as np

from ..errors import CorruptionError, FormatError, SchemaError
from ..timing import cpu_section
from .layout import (
    CODEC_DEFLATE,
    CODEC_NONE,
    FORMAT_VERSION,
    HEADER,
    HEADER_SIZE,
    MAGIC,
    RECORD,
    BranchDescriptor,
    Column,
    EventBatch,
    Schema,
    VarColumn,
    decode_footer,
)
from .sources import ByteSource

DEFAULT_BATCH_ROWS = 65536


def read_header(source: ByteSource) -> tuple[int, int]:
    raw = source.read_at(0, HEADER_SIZE)
    if raw[:4] != MAGIC:
        raise FormatError(f"{source.name}: bad magic, not an NTF file")
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{source.name}: truncated header ({len(raw)} of {HEADER_SIZE} bytes)")
    _, version, _flags, footer_offset, footer_length = HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"{source.name}: unsupported format version {version}")
    if footer_offset < HEADER_SIZE or footer_offset + footer_length > source.size:
        raise FormatError(
            f"{source.name}: truncated file (footer at {footer_offset}+{footer_length}, size {source.size})"
        )
    return footer_offset, footer_length


def read_schema(source: ByteSource) -> Schema:
    """Recover the full schema and basket index from the header and footer.

    Issues exactly two reads and never touches basket data.
    """
    footer_offset, footer_length = read_header(source)
    raw = source.read_at(footer_offset, footer_length)
    if len(raw) != footer_length:
        raise FormatError(f"{source.name}: truncated footer")
    try:
        return decode_footer(raw)
    except FormatError as exc:
        raise type(exc)(f"{source.name}: {exc}") from None


def decode_payload(branch: BranchDescriptor, payload: bytes, events: int, where: str) -> Column:
    t = branch.branch_type
    if not t.is_var:
        expected = events * t.dtype.itemsize
        if len(payload) != expected:
            raise CorruptionError(f"{where}: payload is {len(payload)} bytes, expected {expected}")
        return np.frombuffer(payload, dtype=t.dtype)
    head = 4 + 4 * (events + 1)
    if len(payload) < head:
        raise CorruptionError(f"{where}: VarF32 payload too short")
    (count,) = struct.unpack_from("<I", payload)
    offsets = np.frombuffer(payload, dtype="<u4", count=events + 1, offset=4)
    if len(payload) != head + 4 * count:
        raise CorruptionError(f"{where}: VarF32 payload size does not match value count {count}")
    if offsets[0] != 0 or offsets[-1] != count or np.any(np.diff(offsets.astype(np.int64)) < 0):
        raise CorruptionError(f"{where}: VarF32 offsets are not monotone from 0 to {count}")
    values = np.frombuffer(payload, dtype="<f4", count=count, offset=head)
    return VarColumn(offsets.astype(np.int64), values)


def read_basket(source: ByteSource, branch: BranchDescriptor, basket_index: int) -> Column:
    """Read, verify and decode one basket of ``branch``."""
    if not 0 <= basket_index < len(branch.baskets):
        raise IndexError(
            f"basket index {basket_index} out of range for branch {branch.name!r} "
            f"({len(branch.baskets)} baskets)"
        )
    ref = branch.baskets[basket_index]
    where = f"{source.name}: branch {branch.name!r} basket {basket_index}"
    raw = source.read_at(ref.file_offset, ref.record_size)
    if len(raw) != ref.record_size:
        raise FormatError(f"{where}: truncated basket record")
    with cpu_section():
        codec, usize, csize, crc = RECORD.unpack_from(raw)
        if (usize, csize, crc) != (ref.uncompressed_size, ref.compressed_size, ref.checksum):
            raise CorruptionError(f"{where}: record header disagrees with footer index")
        body = raw[RECORD.size:]
        if codec == CODEC_NONE:
            payload = body
        elif codec == CODEC_DEFLATE:
            try:
                payload = zlib.decompress(body, -15, usize)
            except zlib.error as exc:
                raise CorruptionError(f"{where}: decompression failed: {exc}") from None
        else:
            raise CorruptionError(f"{where}: unknown codec {codec}")
        if len(payload) != usize:
            raise CorruptionError(f"{where}: decompressed to {len(payload)} bytes, expected {usize}")
        if zlib.crc32(payload) != crc:
            raise CorruptionError(f"{where}: checksum mismatch")
        return decode_payload(branch, payload, ref.event_count, where)


def _resolve_predicate(predicate, schema: Schema):
    from ..expr import check_predicate, parse_expr

    if predicate is None:
        return None
    expr = parse_expr(predicate) if isinstance(predicate, str) else predicate
    check_predicate(expr, schema.types)
    return expr


def read_events(
    source: ByteSource,
    branch_selection: Sequence[str] | None = None,
    predicate=None,
    batch_rows: int = DEFAULT_BATCH_ROWS,
    schema: Schema | None = None,
) -> Iterator[EventBatch]:
    """Yield batches holding only the selected branches and passing rows.

    Work is basket-granular: baskets of the predicate's branches are read
    first, and the selected branches' baskets for that row range are only
    read when at least one row passes. Baskets of branches that are neither
    selected nor referenced by the predicate are never read.
    """
    from ..expr import eval_columns, fields

    if schema is None:
        schema = read_schema(source)
    names = list(schema.names if branch_selection is None else branch_selection)
    if len(set(names)) != len(names):
        raise SchemaError(f"branch selection has duplicates: {names}")
    selected = schema.require(names)
    expr = _resolve_predicate(predicate, schema)
    pred_branches = schema.require(sorted(fields(expr))) if expr is not None else []
    if batch_rows < 1:
        raise ValueError("batch_rows must be positive")
    types = {b.name: b.branch_type for b in selected}

    first = 0
    for bi, events in enumerate(schema.basket_event_counts()):
        cache: dict[str, Column] = {}
        mask = None
        if expr is not None:
            for b in pred_branches:
                cache[b.name] = read_basket(source, b, bi)
            with cpu_section():
                mask = np.asarray(eval_columns(expr, cache, events), dtype=bool)
            if not mask.any():
                first += events
                continue
        for b in selected:
            if b.name not in cache:
                cache[b.name] = read_basket(source, b, bi)
        batch = EventBatch({b.name: cache[b.name] for b in selected}, events, first, types)
        if mask is not None and not mask.all():
            with cpu_section():
                batch = batch.filter(mask)
        first += events
        for start in range(0, batch.row_count, batch_rows):
            yield batch.slice(start, start + batch_rows)


def read_table(source: ByteSource, branch_selection: Sequence[str] | None = None, predicate=None) -> EventBatch:
    """Read everything selected into one batch (convenience for small files)."""
    schema = read_schema(source)
    names = list(schema.names if branch_selection is None else branch_selection)
    parts = list(read_events(source, names, predicate, schema=schema))
    types = {n: schema.branch(n).branch_type for n in names}
    cols: dict[str, Column] = {}
    for n in names:
        pieces = [p.columns[n] for p in parts]
        if types[n].is_var:
            cols[n] = VarColumn.concat(pieces)
        else:
            cols[n] = np.concatenate(pieces) if pieces else np.zeros(0, dtype=types[n].dtype)
    return EventBatch(cols, sum(p.row_count for p in parts), 0, types)
