"""Streaming NTF writer.

Rows (or column chunks) are buffered until a basket is full, then every
branch's basket for that row range is encoded and written, so baskets stay
row-aligned across branches. The cut rule per basket:

* a scalar branch never exceeds ``basket_target_bytes``: its basket holds at
  most ``target // itemsize`` events (at least one);
* a VarF32 branch keeps the event that crosses the target in the current
  basket, then cuts;
* the basket ends at the earliest cut demanded by any branch.

The footer is written last and the header patched with its position.
"""

from __future__ import annotations

import logging
import os
import struct
import zlib
from typing import Iterable, Mapping

import numpy as np

from ..errors import SchemaError
from .layout import (
    CODEC_DEFLATE,
    CODEC_NONE,
    DEFAULT_BASKET_BYTES,
    HEADER,
    HEADER_SIZE,
    MAGIC,
    FORMAT_VERSION,
    RECORD,
    BasketRef,
    BranchDescriptor,
    BranchType,
    Schema,
    VarColumn,
    encode_footer,
)

log = logging.getLogger(__name__)

COMPRESSION = {"none": CODEC_NONE, "deflate": CODEC_DEFLATE}
DEFLATE_LEVEL = 6
_ROW_BUFFER = 4096


def encode_payload(branch_type: BranchType, col) -> bytes:
    if branch_type.is_var:
        lengths = col.lengths()
        offsets = np.zeros(len(lengths) + 1, dtype="<u4")
        np.cumsum(lengths, out=offsets[1:])
        values = col.flat_values()
        return struct.pack("<I", len(values)) + offsets.tobytes() + values.astype("<f4", copy=False).tobytes()
    return np.ascontiguousarray(col, dtype=branch_type.dtype).tobytes()


def deflate(payload: bytes, level: int = DEFLATE_LEVEL) -> bytes:
    comp = zlib.compressobj(level, zlib.DEFLATED, -15)
    return comp.compress(payload) + comp.flush()


def basket_cut(types: list[BranchType], columns: list, target: int) -> int | None:
    """Number of pending rows forming the next complete basket, or ``None``
    if the pending rows do not fill one yet."""
    n = len(columns[0])
    if n == 0:
        return None
    cut = None
    scalar_sizes = [t.dtype.itemsize for t in types if not t.is_var]
    if scalar_sizes:
        cut = max(1, target // max(scalar_sizes))
    # every event costs a var payload at least 4 bytes, so the target is
    # crossed within the first target // 4 + 1 events
    window = min(n, target // 4 + 2)
    for t, col in zip(types, columns):
        if not t.is_var:
            continue
        # payload after k events: value_count + (k+1) offsets + values
        lengths = np.diff(col.offsets[:window + 1])
        sizes = 8 + 4 * np.arange(1, window + 1, dtype=np.int64) + 4 * np.cumsum(lengths)
        first_over = int(np.searchsorted(sizes, target, side="right"))
        if first_over < window:
            k = first_over + 1
            cut = k if cut is None else min(cut, k)
    if cut is None or cut > n:
        return None
    return cut


class NTFWriter:
    """Write one NTF file.

    >>> with NTFWriter(path, Schema.declare({"pt": "F64"})) as w:   # doctest: +SKIP
    ...     w.append_columns({"pt": [1.0, 2.0, 3.0]})
    """

    def __init__(
        self,
        target,
        schema: Schema,
        compression: str = "deflate",
        basket_target_bytes: int = DEFAULT_BASKET_BYTES,
    ):
        schema.check_names()
        if compression not in COMPRESSION:
            raise SchemaError(f"unknown compression {compression!r} (expected none or deflate)")
        if basket_target_bytes < 1:
            raise SchemaError("basket_target_bytes must be positive")
        self.schema = schema.without_baskets()
        self.codec = COMPRESSION[compression]
        self.target = int(basket_target_bytes)
        self._types = [b.branch_type for b in self.schema.branches]
        self._names = self.schema.names
        self._pending = [self._empty(t) for t in self._types]
        self._row_buf: list[list] = [[] for _ in self._names]
        self._baskets: list[list[BasketRef]] = [[] for _ in self._names]
        self._events = 0
        if hasattr(target, "write"):
            self._fh, self._path, self._owns = target, None, False
        else:
            self._path = os.fspath(target)
            self._fh, self._owns = open(self._path, "wb"), True
        self._start = self._fh.tell()
        self._fh.write(b"\0" * HEADER_SIZE)
        self._pos = HEADER_SIZE
        self.closed = False
        self.result: Schema | None = None

    @staticmethod
    def _empty(t: BranchType):
        return VarColumn.empty() if t.is_var else np.zeros(0, dtype=t.dtype)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()

    def append_row(self, row: Mapping) -> None:
        if len(row) != len(self._names) or any(n not in row for n in self._names):
            self._check_keys(row.keys())
        for buf, name in zip(self._row_buf, self._names):
            buf.append(row[name])
        if len(self._row_buf[0]) >= _ROW_BUFFER:
            self._flush_rows()

    def append_rows(self, rows: Iterable[Mapping]) -> None:
        for row in rows:
            self.append_row(row)

    def _check_keys(self, keys) -> None:
        keys = set(keys)
        missing = [n for n in self._names if n not in keys]
        extra = sorted(keys - set(self._names))
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing {missing}")
            if extra:
                parts.append(f"unexpected {extra}")
            raise SchemaError("row does not match schema: " + ", ".join(parts))

    def _flush_rows(self) -> None:
        if not self._row_buf[0]:
            return
        cols = dict(zip(self._names, self._row_buf))
        self._row_buf = [[] for _ in self._names]
        self.append_columns(cols)

    def append_columns(self, columns: Mapping) -> None:
        """Append a chunk of rows given column-wise.

        Scalar branches take anything ``numpy.asarray`` accepts; VarF32 branches
        take a :class:`VarColumn` or a sequence of sequences.
        """
        if self._row_buf[0]:
            self._flush_rows()
        self._check_keys(columns.keys())
        converted = []
        for name, t in zip(self._names, self._types):
            col = columns[name]
            if t.is_var:
                if not isinstance(col, VarColumn):
                    col = VarColumn.from_lists(col)
            else:
                col = np.asarray(col)
                if col.dtype != t.dtype:
                    col = col.astype(t.dtype)
                col = col.reshape(-1)
            converted.append(col)
        lengths = {len(c) for c in converted}
        if len(lengths) != 1:
            raise SchemaError(f"column lengths differ: {dict(zip(self._names, map(len, converted)))}")
        if lengths == {0}:
            return
        self._pending = [
            VarColumn.concat([p, c]) if t.is_var else np.concatenate([p, c])
            for t, p, c in zip(self._types, self._pending, converted)
        ]
        self._drain(final=False)

    def _drain(self, final: bool) -> None:
        while len(self._pending[0]):
            k = basket_cut(self._types, self._pending, self.target)
            if k is None:
                if not final:
                    return
                k = len(self._pending[0])
            head = [p.slice(0, k) if isinstance(p, VarColumn) else p[:k] for p in self._pending]
            self._pending = [
                p.slice(k, len(p)) if isinstance(p, VarColumn) else p[k:] for p in self._pending
            ]
            self._write_basket(head, k)

    def _write_basket(self, cols: list, events: int) -> None:
        for i, (t, col) in enumerate(zip(self._types, cols)):
            payload = encode_payload(t, col)
            crc = zlib.crc32(payload)
            codec, body = CODEC_NONE, payload
            if self.codec == CODEC_DEFLATE:
                packed = deflate(payload)
                if len(packed) < len(payload):
                    codec, body = CODEC_DEFLATE, packed
            self._fh.write(RECORD.pack(codec, len(payload), len(body), crc))
            self._fh.write(body)
            self._baskets[i].append(BasketRef(self._pos, len(body), len(payload), events, crc))
            self._pos += RECORD.size + len(body)
        self._events += events

    def close(self) -> Schema:
        if self.closed:
            return self.result
        self._flush_rows()
        self._drain(final=True)
        schema = Schema(
            tuple(BranchDescriptor(n, t, tuple(b)) for n, t, b in zip(self._names, self._types, self._baskets)),
            self._events,
        )
        footer = encode_footer(schema)
        footer_offset = self._pos
        self._fh.write(footer)
        end = self._fh.tell()
        self._fh.seek(self._start)
        self._fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, 0, footer_offset, len(footer)))
        self._fh.seek(end)
        if self._owns:
            self._fh.close()
        self.closed = True
        self.result = schema
        log.debug("wrote %s: %d events, %d baskets", self._path or self._fh, self._events, schema.basket_count)
        return schema

    def abort(self) -> None:
        """Close without finishing; a file created by this writer is removed."""
        if self.closed:
            return
        self.closed = True
        if self._owns:
            self._fh.close()
            try:
                os.unlink(self._path)
            except OSError:
                pass


def write_dataset(
    path,
    schema: Schema,
    rows: Iterable[Mapping],
    compression: str = "deflate",
    basket_target_bytes: int = DEFAULT_BASKET_BYTES,
) -> Schema:
    """Write ``rows`` (mappings of branch name to value or array) to ``path``."""
    with NTFWriter(path, schema, compression, basket_target_bytes) as w:
        w.append_rows(rows)
    return w.result


def write_columns(
    path,
    schema: Schema,
    columns: Mapping,
    compression: str = "deflate",
    basket_target_bytes: int = DEFAULT_BASKET_BYTES,
) -> Schema:
    with NTFWriter(path, schema, compression, basket_target_bytes) as w:
        w.append_columns(columns)
    return w.result
