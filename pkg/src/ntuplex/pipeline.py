"""Disk-to-disk data reduction: skimming (drop events) and slimming (drop branches).

Both stream basket by basket and never hold more than one basket range of
the input in memory. Their in-memory counterparts, filtering and pruning,
are :func:`ntuplex.eventfmt.read_events` with a predicate and a branch
selection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .errors import SchemaError
from .eventfmt import DEFAULT_BASKET_BYTES, NTFWriter, Schema, open_source, read_events, read_schema
from .expr import check_predicate, parse_expr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SkimCounts:
    events_in: int
    events_out: int


def _open(input_):
    source = open_source(input_)
    return source, source is not input_


def skim(
    input_,
    predicate,
    output,
    compression: str = "deflate",
    basket_target_bytes: int = DEFAULT_BASKET_BYTES,
) -> SkimCounts:
    """Copy the events of ``input_`` passing ``predicate`` to ``output``.

    ``predicate`` is expression text or a parsed expression. It is
    type-checked before ``output`` is created.
    """
    source, owned = _open(input_)
    try:
        schema = read_schema(source)
        expr = parse_expr(predicate) if isinstance(predicate, str) else predicate
        check_predicate(expr, schema.types)
        with NTFWriter(output, schema.without_baskets(), compression, basket_target_bytes) as writer:
            for batch in read_events(source, schema.names, expr, schema=schema):
                writer.append_columns(batch.columns)
        counts = SkimCounts(schema.event_count, writer.result.event_count)
    finally:
        if owned:
            source.close()
    log.info("skim %s -> %s: %d of %d events kept", source.name, output, counts.events_out, counts.events_in)
    return counts


def slim(
    input_,
    keep: Sequence[str],
    output,
    compression: str = "deflate",
    basket_target_bytes: int = DEFAULT_BASKET_BYTES,
) -> Schema:
    """Copy only the branches named in ``keep`` to ``output``; returns the output schema."""
    keep = list(keep)
    if not keep:
        raise SchemaError("slim needs at least one branch to keep")
    if len(set(keep)) != len(keep):
        raise SchemaError(f"duplicate branch names in keep list: {keep}")
    source, owned = _open(input_)
    try:
        schema = read_schema(source)
        kept = schema.subset(keep).without_baskets()
        with NTFWriter(output, kept, compression, basket_target_bytes) as writer:
            for batch in read_events(source, keep, schema=schema):
                writer.append_columns(batch.columns)
    finally:
        if owned:
            source.close()
    log.info("slim %s -> %s: kept %s", source.name, output, keep)
    return writer.result
