"""Order-independent summation of float64 values and products.

Every finite double is an integer multiple of 2**-1074, so every product of
two doubles is an integer multiple of 2**-2148. A running sum is kept
exactly as a Python integer count of those units; reading the value back
rounds once, correctly. Sums therefore depend neither on the order or
grouping in which terms and partial sums are combined, nor on whether a
weighted term ``w * q`` is added once or as ``w`` unit-weight terms.
"""

from __future__ import annotations

import math
import sys

import numpy as np

_FRAC_BITS = 2148
_SCALE = 1 << _FRAC_BITS
_SUB = 1 << 1074  # units per smallest subnormal
_DBL_MAX = sys.float_info.max


def to_units(x: float) -> int:
    num, den = float(x).as_integer_ratio()
    return num * (_SCALE // den)


def product_units(a: float, b: float) -> int:
    an, ad = float(a).as_integer_ratio()
    bn, bd = float(b).as_integer_ratio()
    return an * bn * (_SCALE // (ad * bd))


def units_to_float(units: int) -> float:
    try:
        return units / _SCALE
    except OverflowError:
        return math.inf if units > 0 else -math.inf


def _units_of_finite(values: list[float]) -> int:
    total = 0
    xs = list(values)
    try:
        # each pass peels off the correctly rounded remainder
        for _ in range(80):
            s = math.fsum(xs)
            if s == 0.0:
                return total
            total += to_units(s)
            xs.append(-s)
    except OverflowError:
        pass
    return sum(map(to_units, values))


def _greedy(rem: int, scale: int) -> tuple[list[float], int]:
    """Doubles whose sum is ``rem / scale``, as far as doubles reach."""
    terms = []
    while rem:
        try:
            t = rem / scale
        except OverflowError:
            t = _DBL_MAX if rem > 0 else -_DBL_MAX
        if math.isinf(t):
            t = math.copysign(_DBL_MAX, t)
        if t == 0.0:
            break
        terms.append(t)
        rem -= to_units(t) * scale // _SCALE
    return terms, rem


class ExactSum:
    __slots__ = ("units", "special")

    def __init__(self, units: int = 0, special: str | None = None):
        self.units = units
        self.special = special  # None, "nan", "+inf" or "-inf"

    def _add_special(self, kind: str) -> None:
        if self.special == "nan" or kind == "nan":
            self.special = "nan"
        elif self.special is None or self.special == kind:
            self.special = kind
        else:
            self.special = "nan"
        self.units = 0

    def _add_nonfinite(self, x: float) -> None:
        self._add_special("nan" if x != x else ("+inf" if x > 0 else "-inf"))

    def add(self, x: float) -> None:
        if math.isfinite(x):
            if self.special is None:
                self.units += to_units(x)
        else:
            self._add_nonfinite(x)

    def add_product(self, w: float, q: float) -> None:
        """Add ``w * q`` without rounding (``w`` finite and positive)."""
        if math.isfinite(q):
            if self.special is None:
                self.units += product_units(w, q)
        else:
            self._add_nonfinite(q)

    def add_array(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        finite = np.isfinite(values)
        if not finite.all():
            bad = values[~finite]
            if np.isnan(bad).any():
                self._add_special("nan")
            if (bad == np.inf).any():
                self._add_special("+inf")
            if (bad == -np.inf).any():
                self._add_special("-inf")
            values = values[finite]
        if self.special is None and len(values):
            self.units += _units_of_finite(values.tolist())

    def add_products(self, w: np.ndarray, q: np.ndarray) -> None:
        w = np.asarray(w, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        if (w == 1.0).all():
            self.add_array(q)
            return
        for a, b in zip(w.tolist(), q.tolist()):
            self.add_product(a, b)

    def merged(self, other: ExactSum) -> ExactSum:
        out = ExactSum(self.units, self.special)
        if other.special is not None:
            out._add_special(other.special)
        elif out.special is None:
            out.units += other.units
        return out

    @property
    def value(self) -> float:
        if self.special == "nan":
            return math.nan
        if self.special is not None:
            return math.inf if self.special == "+inf" else -math.inf
        return units_to_float(self.units)

    def parts(self) -> tuple[float, list[float], list[float]]:
        """``(value, residual, tail)`` with ``value + sum(residual) + 2**-1074 * sum(tail)``
        equal to the exact sum.

        ``residual`` is empty when the sum is representable; ``tail`` is only
        needed for bits below the smallest subnormal, which only products of
        very small numbers produce. If the sum overflowed, ``residual``
        carries all of it.
        """
        value = self.value
        if self.special is not None:
            return value, [], []
        rem = self.units - to_units(value) if math.isfinite(value) else self.units
        residual, rem = _greedy(rem, _SCALE)
        tail, rem = _greedy(rem, _SUB)
        assert rem == 0
        return value, residual, tail

    def residual(self) -> list[float]:
        return self.parts()[1]

    @classmethod
    def from_parts(cls, value: float, residual=(), tail=()) -> ExactSum:
        if value != value:
            return cls(0, "nan")
        units = sum(map(to_units, residual)) + sum(to_units(t) * _SUB // _SCALE for t in tail)
        if math.isinf(value):
            if not residual and not tail:
                return cls(0, "+inf" if value > 0 else "-inf")
            return cls(units)
        return cls(to_units(value) + units)

    def copy(self) -> ExactSum:
        return ExactSum(self.units, self.special)

    def __eq__(self, other) -> bool:
        return isinstance(other, ExactSum) and (self.units, self.special) == (other.units, other.special)

    def __repr__(self) -> str:
        return f"ExactSum({self.value!r})"
