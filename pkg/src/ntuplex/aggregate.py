"""Composable, mergeable aggregators for map-reduce histogramming.

An aggregator spec describes *what* to accumulate; :func:`zero` turns it into
an empty aggregator, :func:`fill` adds one event, :func:`merge` combines two
partial results. ``zero(spec)`` is the identity of ``merge``, so partial
aggregators filled on separate partitions combine in any grouping.

Primitives:

``Count``
    sum of weights.
``Sum(quantity)``
    weighted sum of the quantity, kept exactly (see :mod:`ntuplex.exactsum`),
    so results do not depend on how events were partitioned.
``Average(quantity)``, ``Deviate(quantity)``
    weighted mean (and sum of squared residuals ``m2``), updated with the
    weighted Welford/West recurrences and merged with Chan's formulas.
``Bin(num, low, high, quantity, value)``
    ``num`` equal-width bins on ``[low, high)``, each holding a ``value``
    aggregator, plus ``Count`` buckets for underflow, overflow and NaN.

Quantities are expressions over event fields (:mod:`ntuplex.expr`).
Two-dimensional histograms are a ``Bin`` whose value is another ``Bin``.

>>> spec = BinSpec(4, 0.0, 4.0, "x", CountSpec())
>>> h = zero(spec)
>>> for x in (0.5, 2.5, 2.7, 9.0):
...     _ = fill(h, {"x": x})
>>> [c.entries for c in h.values], h.overflow.entries
([1.0, 0.0, 2.0, 0.0], 1.0)
"""

from __future__ import annotations

import bisect
import copy
import enum
import functools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .errors import AggregatorFormatError, ExprTypeError, SpecMismatchError, UserInputError
from .exactsum import ExactSum
from .expr import Expr, check_quantity, eval_columns, evaluate, fields, parse_expr, to_text
from .timing import cpu_section

# -- specs ------------------------------------------------------------------


def _as_expr(quantity) -> Expr:
    return parse_expr(quantity) if isinstance(quantity, str) else quantity


@dataclass(frozen=True)
class CountSpec:
    kind = "Count"


@dataclass(frozen=True)
class SumSpec:
    quantity: Expr
    kind = "Sum"

    def __post_init__(self):
        object.__setattr__(self, "quantity", _as_expr(self.quantity))


@dataclass(frozen=True)
class AverageSpec(SumSpec):
    kind = "Average"


@dataclass(frozen=True)
class DeviateSpec(SumSpec):
    kind = "Deviate"


@dataclass(frozen=True)
class BinSpec:
    num: int
    low: float
    high: float
    quantity: Expr
    value: AggregatorSpec = field(default_factory=CountSpec)
    kind = "Bin"

    def __post_init__(self):
        object.__setattr__(self, "quantity", _as_expr(self.quantity))
        if isinstance(self.num, bool) or not isinstance(self.num, (int, np.integer)) or self.num < 1:
            raise UserInputError(f"Bin needs num >= 1, got {self.num!r}")
        object.__setattr__(self, "num", int(self.num))
        low, high = float(self.low), float(self.high)
        if not (math.isfinite(low) and math.isfinite(high)) or not low < high:
            raise UserInputError(f"Bin needs finite low < high, got low={self.low!r} high={self.high!r}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)


AggregatorSpec = Union[CountSpec, SumSpec, AverageSpec, DeviateSpec, BinSpec]


def describe(spec: AggregatorSpec) -> str:
    if isinstance(spec, BinSpec):
        return f"Bin(num={spec.num}, low={spec.low!r}, high={spec.high!r}, {to_text(spec.quantity)}, {describe(spec.value)})"
    if isinstance(spec, CountSpec):
        return "Count()"
    return f"{spec.kind}({to_text(spec.quantity)})"


def spec_fields(spec: AggregatorSpec) -> set[str]:
    """Branches referenced by any quantity in ``spec``."""
    if isinstance(spec, CountSpec):
        return set()
    out = fields(spec.quantity)
    if isinstance(spec, BinSpec):
        out |= spec_fields(spec.value)
    return out


def check_spec(spec: AggregatorSpec, types: Mapping) -> None:
    """Type-check every quantity of ``spec`` against ``{branch: BranchType}``."""
    if isinstance(spec, CountSpec):
        return
    check_quantity(spec.quantity, types)
    if isinstance(spec, BinSpec):
        check_spec(spec.value, types)


def spec_to_json(spec: AggregatorSpec) -> dict:
    if isinstance(spec, CountSpec):
        return {"type": "Count"}
    if isinstance(spec, BinSpec):
        return {
            "type": "Bin",
            "num": spec.num,
            "low": spec.low,
            "high": spec.high,
            "quantity": to_text(spec.quantity),
            "value": spec_to_json(spec.value),
        }
    return {"type": spec.kind, "quantity": to_text(spec.quantity)}


_SPEC_TYPES = {"Sum": SumSpec, "Average": AverageSpec, "Deviate": DeviateSpec}


def spec_from_json(doc) -> AggregatorSpec:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise AggregatorFormatError(f"aggregator spec is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise AggregatorFormatError(f"aggregator spec must be a JSON object, got {type(doc).__name__}")
    kind = doc.get("type")
    allowed = {"Count": {"type"}, "Bin": {"type", "num", "low", "high", "quantity", "value"}}
    keys = allowed.get(kind, {"type", "quantity"})
    if kind not in ("Count", "Bin", *_SPEC_TYPES):
        raise AggregatorFormatError(f"unknown aggregator type {kind!r}")
    unknown = set(doc) - keys
    if unknown:
        raise AggregatorFormatError(f"unknown keys for {kind}: {sorted(unknown)}")
    try:
        if kind == "Count":
            return CountSpec()
        if kind == "Bin":
            value = spec_from_json(doc["value"]) if "value" in doc else CountSpec()
            return BinSpec(doc["num"], doc["low"], doc["high"], doc["quantity"], value)
        return _SPEC_TYPES[kind](doc["quantity"])
    except KeyError as exc:
        raise AggregatorFormatError(f"{kind} spec is missing {exc}") from None
    except TypeError as exc:
        raise AggregatorFormatError(f"bad {kind} spec: {exc}") from None


# -- binning ----------------------------------------------------------------


class Flow(enum.Enum):
    UNDER = "underflow"
    OVER = "overflow"
    NAN = "nanflow"


@functools.lru_cache(maxsize=256)
def _edges(num: int, low: float, high: float) -> tuple[np.ndarray, list[float]]:
    edges = low + (high - low) * np.arange(num + 1, dtype=np.float64) / num
    edges[0], edges[num] = low, high
    return edges, edges.tolist()


def bin_edges(num: int, low: float, high: float) -> np.ndarray:
    """The ``num + 1`` bin boundaries: ``low + (high - low) * k / num`` with both ends exact."""
    return _edges(num, float(low), float(high))[0].copy()


def bin_index(num: int, low: float, high: float, x: float) -> int | Flow:
    """Bin of ``x``: the largest ``k`` with ``edge[k] <= x``, or a flow bucket.

    The top edge is exclusive, NaN goes to :attr:`Flow.NAN` and infinities
    to the under/overflow buckets. Away from edge roundoff this equals
    ``floor(num * (x - low) / (high - low))``.
    """
    if x != x:
        return Flow.NAN
    if x < low:
        return Flow.UNDER
    if x >= high:
        return Flow.OVER
    _, edges = _edges(num, float(low), float(high))
    return bisect.bisect_right(edges, x, 0, num) - 1


def bin_codes(num: int, low: float, high: float, x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`bin_index`; flows coded as ``num`` (under), ``num+1`` (over), ``num+2`` (NaN)."""
    edges, _ = _edges(num, float(low), float(high))
    codes = np.searchsorted(edges[:num], x, side="right") - 1
    codes[x < low] = num
    codes[x >= high] = num + 1
    codes[np.isnan(x)] = num + 2
    return codes


# -- evaluation context for column batches ----------------------------------


class _Columns:
    """Evaluates quantities over a whole batch once and caches the results."""

    def __init__(self, columns: Mapping, n: int):
        self.columns = columns
        self.n = n
        self._cache: dict = {}

    def quantity(self, expr: Expr) -> np.ndarray:
        try:
            return self._cache[expr]
        except KeyError:
            pass
        values = eval_columns(expr, self.columns, self.n)
        if values.dtype == np.bool_:
            raise ExprTypeError(f"quantity {to_text(expr)!r} is boolean, expected a number")
        self._cache[expr] = values
        return values


def _quantity(expr: Expr, event: Mapping) -> float:
    value = evaluate(expr, event)
    if isinstance(value, bool):
        raise ExprTypeError(f"quantity {to_text(expr)!r} is boolean, expected a number")
    return value


def _fold(start: float, weights: np.ndarray) -> float:
    """``start + w0 + w1 + ...`` accumulated left to right, as a per-event loop would."""
    if len(weights) == 0:
        return start
    return float(np.cumsum(np.concatenate(([start], weights)))[-1])


# -- aggregators ------------------------------------------------------------


class Aggregator:
    spec: AggregatorSpec
    entries: float

    def fill(self, event: Mapping, weight: float = 1.0) -> Aggregator:
        return fill(self, event, weight)

    def __add__(self, other: Aggregator) -> Aggregator:
        return merge(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Aggregator):
            return NotImplemented
        return serialize(self) == serialize(other)

    __hash__ = None

    def copy(self) -> Aggregator:
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"<{describe(self.spec)} entries={self.entries!r}>"


class Count(Aggregator):
    def __init__(self, spec: CountSpec | None = None, entries: float = 0.0):
        self.spec = spec or CountSpec()
        self.entries = entries

    def _fill(self, event, w):
        self.entries += w

    def _fill_rows(self, ctx, idx, w):
        self.entries = _fold(self.entries, w)

    def _merge(self, other):
        return Count(self.spec, self.entries + other.entries)

    def _state(self):
        return {"entries": self.entries}

    @property
    def summary(self) -> float:
        return self.entries


class Sum(Aggregator):
    def __init__(self, spec: SumSpec, entries: float = 0.0, total: ExactSum | None = None):
        self.spec = spec
        self.entries = entries
        self.total = total if total is not None else ExactSum()

    @property
    def sum(self) -> float:
        return self.total.value

    def _fill(self, event, w):
        q = _quantity(self.spec.quantity, event)
        self.entries += w
        self.total.add_product(w, q)

    def _fill_rows(self, ctx, idx, w):
        q = ctx.quantity(self.spec.quantity)[idx]
        self.entries = _fold(self.entries, w)
        self.total.add_products(w, q)

    def _merge(self, other):
        return Sum(self.spec, self.entries + other.entries, self.total.merged(other.total))

    def _state(self):
        value, residual, tail = self.total.parts()
        state = {"entries": self.entries, "sum": value}
        if residual:
            state["residual"] = residual
        if tail:
            state["tail"] = tail
        return state

    @property
    def summary(self) -> float:
        return self.sum


class Average(Aggregator):
    def __init__(self, spec: AverageSpec, entries: float = 0.0, mean: float = 0.0):
        self.spec = spec
        self.entries = entries
        self.mean = mean

    def _fill(self, event, w):
        q = _quantity(self.spec.quantity, event)
        self.entries += w
        if math.isfinite(q) and math.isfinite(self.mean):
            self.mean += (q - self.mean) * (w / self.entries)
        else:
            self.mean += q  # IEEE rules: inf stays inf, opposite infinities or NaN give NaN

    def _fill_rows(self, ctx, idx, w):
        q = ctx.quantity(self.spec.quantity)[idx]
        with np.errstate(all="ignore"):
            total_w = float(np.sum(w))
            mean = float(np.sum(w * q) / total_w)
        merged = self._merge(Average(self.spec, total_w, mean))
        self.entries, self.mean = merged.entries, merged.mean

    def _merge(self, other):
        if other.entries == 0:
            return Average(self.spec, self.entries, self.mean)
        if self.entries == 0:
            return Average(self.spec, other.entries, other.mean)
        n = self.entries + other.entries
        if not (math.isfinite(self.mean) and math.isfinite(other.mean)):
            return Average(self.spec, n, self.mean + other.mean)
        return Average(self.spec, n, self.mean + (other.mean - self.mean) * (other.entries / n))

    def _state(self):
        return {"entries": self.entries, "mean": self.mean}

    @property
    def summary(self) -> float:
        return self.mean


class Deviate(Aggregator):
    def __init__(self, spec: DeviateSpec, entries: float = 0.0, mean: float = 0.0, m2: float = 0.0):
        self.spec = spec
        self.entries = entries
        self.mean = mean
        self.m2 = m2

    @property
    def variance(self) -> float:
        """Population variance ``m2 / entries`` (NaN when empty)."""
        return self.m2 / self.entries if self.entries else math.nan

    def _fill(self, event, w):
        q = _quantity(self.spec.quantity, event)
        self.entries += w
        if not (math.isfinite(q) and math.isfinite(self.mean)):
            self.mean += q
            self.m2 = math.nan
            return
        delta = q - self.mean
        self.mean += delta * (w / self.entries)
        self.m2 += w * delta * (q - self.mean)

    def _fill_rows(self, ctx, idx, w):
        q = ctx.quantity(self.spec.quantity)[idx]
        with np.errstate(all="ignore"):
            total_w = float(np.sum(w))
            mean = float(np.sum(w * q) / total_w)
            m2 = float(np.sum(w * (q - mean) ** 2))
        merged = self._merge(Deviate(self.spec, total_w, mean, m2))
        self.entries, self.mean, self.m2 = merged.entries, merged.mean, merged.m2

    def _merge(self, other):
        if other.entries == 0:
            return Deviate(self.spec, self.entries, self.mean, self.m2)
        if self.entries == 0:
            return Deviate(self.spec, other.entries, other.mean, other.m2)
        n = self.entries + other.entries
        if not (math.isfinite(self.mean) and math.isfinite(other.mean)):
            return Deviate(self.spec, n, self.mean + other.mean, math.nan)
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.entries / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.entries * other.entries / n)
        return Deviate(self.spec, n, mean, m2)

    def _state(self):
        return {"entries": self.entries, "mean": self.mean, "m2": self.m2}

    @property
    def summary(self) -> float:
        return self.mean


class Bin(Aggregator):
    def __init__(self, spec: BinSpec, entries: float = 0.0, values=None, underflow=None, overflow=None, nanflow=None):
        self.spec = spec
        self.entries = entries
        self.values = values if values is not None else [zero(spec.value) for _ in range(spec.num)]
        self.underflow = underflow or Count()
        self.overflow = overflow or Count()
        self.nanflow = nanflow or Count()

    def _flows(self):
        return (self.underflow, self.overflow, self.nanflow)

    def _fill(self, event, w):
        q = _quantity(self.spec.quantity, event)
        idx = bin_index(self.spec.num, self.spec.low, self.spec.high, q)
        self.entries += w
        if idx is Flow.UNDER:
            self.underflow._fill(event, w)
        elif idx is Flow.OVER:
            self.overflow._fill(event, w)
        elif idx is Flow.NAN:
            self.nanflow._fill(event, w)
        else:
            self.values[idx]._fill(event, w)

    def _fill_rows(self, ctx, idx, w):
        num = self.spec.num
        q = ctx.quantity(self.spec.quantity)[idx]
        codes = bin_codes(num, self.spec.low, self.spec.high, q)
        self.entries = _fold(self.entries, w)
        counts = isinstance(self.spec.value, CountSpec)
        targets = (self.values if counts else []) + list(self._flows())
        offset = 0 if counts else num
        # one ordered bincount per bucket keeps the per-event accumulation order
        start = np.array([t.entries for t in targets])
        slots = np.arange(offset, num + 3)
        mine = codes >= offset
        totals = np.bincount(
            np.concatenate((slots, codes[mine])) - offset,
            weights=np.concatenate((start, w[mine])),
            minlength=len(targets),
        )
        for t, total in zip(targets, totals.tolist()):
            t.entries = total
        if counts:
            return
        inside = codes < num
        if not inside.any():
            return
        order = np.argsort(codes[inside], kind="stable")
        rows, weights = idx[inside][order], w[inside][order]
        sorted_codes = codes[inside][order]
        bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
        for lo, hi in zip(np.concatenate(([0], bounds)), np.concatenate((bounds, [len(rows)]))):
            self.values[int(sorted_codes[lo])]._fill_rows(ctx, rows[lo:hi], weights[lo:hi])

    def _merge(self, other):
        return Bin(
            self.spec,
            self.entries + other.entries,
            [a._merge(b) for a, b in zip(self.values, other.values)],
            self.underflow._merge(other.underflow),
            self.overflow._merge(other.overflow),
            self.nanflow._merge(other.nanflow),
        )

    def _state(self):
        return {
            "entries": self.entries,
            "values": [to_json(v) for v in self.values],
            "underflow": to_json(self.underflow),
            "overflow": to_json(self.overflow),
            "nanflow": to_json(self.nanflow),
        }

    @property
    def summary(self) -> float:
        return self.entries

    def edges(self) -> np.ndarray:
        return bin_edges(self.spec.num, self.spec.low, self.spec.high)


# -- operations -------------------------------------------------------------


def zero(spec: AggregatorSpec) -> Aggregator:
    """Empty aggregator for ``spec``; the identity of :func:`merge`."""
    if isinstance(spec, CountSpec):
        return Count(spec)
    if isinstance(spec, BinSpec):
        return Bin(spec)
    if isinstance(spec, DeviateSpec):
        return Deviate(spec)
    if isinstance(spec, AverageSpec):
        return Average(spec)
    if isinstance(spec, SumSpec):
        return Sum(spec)
    raise UserInputError(f"not an aggregator spec: {spec!r}")


def _check_weight(weight: float) -> float:
    weight = float(weight)
    if not math.isfinite(weight):
        raise UserInputError(f"weight must be finite, got {weight!r}")
    if weight < 0:
        raise UserInputError(f"weight must be non-negative, got {weight!r}")
    return weight


def fill(agg: Aggregator, event: Mapping, weight: float = 1.0) -> Aggregator:
    """Add one event (a mapping of field name to value) with ``weight``; returns ``agg``."""
    weight = _check_weight(weight)
    if weight == 0.0:
        return agg
    with cpu_section():
        agg._fill(event, weight)
    return agg


def fill_columns(agg: Aggregator, columns: Mapping, n: int, weights=None) -> Aggregator:
    """Add ``n`` events given column-wise (``{branch: column}``).

    Counts and sums accumulate in row order like repeated :func:`fill`
    calls; means and ``m2`` are folded in per batch with the merge formulas.
    """
    with cpu_section():
        if weights is None:
            w = np.ones(n)
            idx = np.arange(n)
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if len(w) != n:
                raise UserInputError(f"got {len(w)} weights for {n} events")
            if not np.isfinite(w).all():
                raise UserInputError("weights must be finite")
            if (w < 0).any():
                raise UserInputError("weights must be non-negative")
            idx = np.flatnonzero(w > 0)
            w = w[idx]
        if len(idx):
            agg._fill_rows(_Columns(columns, n), idx, w)
    return agg


def fill_batch(agg: Aggregator, batch, weights=None) -> Aggregator:
    return fill_columns(agg, batch.columns, batch.row_count, weights)


def merge(a: Aggregator, b: Aggregator) -> Aggregator:
    """Combine two partial aggregators of the same spec into a new one."""
    if a.spec != b.spec:
        raise SpecMismatchError(f"cannot merge {describe(a.spec)} with {describe(b.spec)}")
    with cpu_section():
        return a._merge(b)


# -- serialization ----------------------------------------------------------


def to_json(agg: Aggregator) -> dict:
    doc = {"type": agg.spec.kind}
    if isinstance(agg.spec, BinSpec):
        doc.update(num=agg.spec.num, low=agg.spec.low, high=agg.spec.high)
    if not isinstance(agg.spec, CountSpec):
        doc["quantity"] = to_text(agg.spec.quantity)
    doc.update(agg._state())
    return doc


def serialize(agg: Aggregator) -> str:
    """JSON text; floats are written with round-trip precision."""
    return json.dumps(to_json(agg), separators=(",", ":"))


def _number(doc: dict, key: str) -> float:
    try:
        value = doc[key]
    except KeyError:
        raise AggregatorFormatError(f"{doc.get('type')} is missing {key!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AggregatorFormatError(f"{key!r} must be a number, got {value!r}")
    return float(value)


def from_json(doc) -> Aggregator:
    if not isinstance(doc, dict):
        raise AggregatorFormatError(f"aggregator must be a JSON object, got {type(doc).__name__}")
    kind = doc.get("type")
    try:
        if kind == "Count":
            return Count(CountSpec(), _number(doc, "entries"))
        if kind == "Sum":
            extra = {}
            for key in ("residual", "tail"):
                terms = doc.get(key, [])
                if not isinstance(terms, list):
                    raise AggregatorFormatError(f"{key!r} must be a list")
                extra[key] = [_number({key: t}, key) for t in terms]
            return Sum(SumSpec(doc["quantity"]), _number(doc, "entries"),
                       ExactSum.from_parts(_number(doc, "sum"), extra["residual"], extra["tail"]))
        if kind == "Average":
            return Average(AverageSpec(doc["quantity"]), _number(doc, "entries"), _number(doc, "mean"))
        if kind == "Deviate":
            return Deviate(DeviateSpec(doc["quantity"]), _number(doc, "entries"),
                           _number(doc, "mean"), _number(doc, "m2"))
        if kind == "Bin":
            values = [from_json(v) for v in doc["values"]]
            if not values:
                raise AggregatorFormatError("Bin has no values")
            spec = BinSpec(doc["num"], doc["low"], doc["high"], doc["quantity"], values[0].spec)
            if len(values) != spec.num:
                raise AggregatorFormatError(f"Bin declares num={spec.num} but has {len(values)} values")
            if any(v.spec != spec.value for v in values):
                raise AggregatorFormatError("Bin values do not share one spec")
            flows = [from_json(doc[k]) for k in ("underflow", "overflow", "nanflow")]
            if any(not isinstance(f, Count) for f in flows):
                raise AggregatorFormatError("Bin flow buckets must be Count")
            return Bin(spec, _number(doc, "entries"), values, *flows)
    except KeyError as exc:
        raise AggregatorFormatError(f"{kind} is missing {exc}") from None
    except (TypeError, UserInputError) as exc:
        if isinstance(exc, AggregatorFormatError):
            raise
        raise AggregatorFormatError(f"bad {kind}: {exc}") from None
    raise AggregatorFormatError(f"unknown aggregator type {kind!r}")


def deserialize(text: str | bytes) -> Aggregator:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise AggregatorFormatError(f"malformed aggregator JSON: {exc}") from None
    return from_json(doc)


# -- plot tables ------------------------------------------------------------


@dataclass(frozen=True)
class PlotRow:
    bin_low: float
    bin_high: float
    value: float
    entries: float
    flow: str | None = None  # "underflow", "overflow", "nanflow" for trailer rows


def to_plot_table(agg: Aggregator) -> list[PlotRow]:
    """One row per bin, then underflow, overflow and nanflow trailer rows.

    The value column is the bin's summary: entries for Count and nested Bin,
    the sum for Sum, the mean for Average and Deviate. Trailer rows carry
    ``(-inf, low)``, ``(high, inf)`` and ``(nan, nan)`` as their edges.
    """
    if not isinstance(agg, Bin):
        raise UserInputError(f"plot tables need a Bin aggregator, got {describe(agg.spec)}")
    edges = agg.edges().tolist()
    rows = [PlotRow(edges[i], edges[i + 1], v.summary, v.entries) for i, v in enumerate(agg.values)]
    low, high = agg.spec.low, agg.spec.high
    rows.append(PlotRow(-math.inf, low, agg.underflow.entries, agg.underflow.entries, Flow.UNDER.value))
    rows.append(PlotRow(high, math.inf, agg.overflow.entries, agg.overflow.entries, Flow.OVER.value))
    rows.append(PlotRow(math.nan, math.nan, agg.nanflow.entries, agg.nanflow.entries, Flow.NAN.value))
    return rows


PLOT_HEADER = "bin_low,bin_high,value,entries"


def plot_table_csv(agg_or_rows) -> str:
    rows = to_plot_table(agg_or_rows) if isinstance(agg_or_rows, Aggregator) else agg_or_rows
    lines = [PLOT_HEADER]
    for r in rows:
        lines.append(",".join(repr(float(x)) for x in (r.bin_low, r.bin_high, r.value, r.entries)))
    return "\n".join(lines) + "\n"
