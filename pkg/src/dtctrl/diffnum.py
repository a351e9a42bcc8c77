"""Hyper-dual numbers: exact first and mixed second derivatives in one pass.

A hyper-dual number ``a + b*e1 + c*e2 + d*e1*e2`` with ``e1**2 = e2**2 = 0``
carries a value, two independent first-derivative slots and the mixed
second derivative.  Seeding one input with ``d1 = 1`` and another with
``d2 = 1`` and evaluating a polynomial/rational expression yields
``d/da``, ``d/db`` and ``d2/da db`` with no truncation error.
"""
from __future__ import annotations

import numbers

DIV_EPS = 1e-300

FIRST = "first"
SECOND = "second"
BOTH = "both"


class HyperDual:
    __slots__ = ("value", "d1", "d2", "d12")

    def __init__(self, value, d1=0.0, d2=0.0, d12=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2
        self.d12 = d12

    def __repr__(self):
        return f"HyperDual({self.value!r}, {self.d1!r}, {self.d2!r}, {self.d12!r})"

    def as_tuple(self):
        return (self.value, self.d1, self.d2, self.d12)

    def __eq__(self, other):
        if isinstance(other, HyperDual):
            return self.as_tuple() == other.as_tuple()
        if isinstance(other, numbers.Real):
            return self.as_tuple() == (other, 0.0, 0.0, 0.0)
        return NotImplemented

    __hash__ = None

    # arithmetic -----------------------------------------------------------

    def __pos__(self):
        return self

    def __neg__(self):
        return HyperDual(-self.value, -self.d1, -self.d2, -self.d12)

    def __add__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.value + other.value, self.d1 + other.d1,
                             self.d2 + other.d2, self.d12 + other.d12)
        if isinstance(other, numbers.Real):
            return HyperDual(self.value + other, self.d1, self.d2, self.d12)
        return NotImplemented

    def __radd__(self, other):
        if isinstance(other, numbers.Real):
            return HyperDual(other + self.value, self.d1, self.d2, self.d12)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, HyperDual):
            return HyperDual(self.value - other.value, self.d1 - other.d1,
                             self.d2 - other.d2, self.d12 - other.d12)
        if isinstance(other, numbers.Real):
            return HyperDual(self.value - other, self.d1, self.d2, self.d12)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, numbers.Real):
            return HyperDual(other - self.value, -self.d1, -self.d2, -self.d12)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, HyperDual):
            a, b = self, other
            return HyperDual(
                a.value * b.value,
                a.value * b.d1 + a.d1 * b.value,
                a.value * b.d2 + a.d2 * b.value,
                a.value * b.d12 + a.d1 * b.d2 + a.d2 * b.d1 + a.d12 * b.value,
            )
        if isinstance(other, numbers.Real):
            return HyperDual(self.value * other, self.d1 * other,
                             self.d2 * other, self.d12 * other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, numbers.Real):
            return HyperDual(other * self.value, other * self.d1,
                             other * self.d2, other * self.d12)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, numbers.Real):
            other = HyperDual(other)
        if not isinstance(other, HyperDual):
            return NotImplemented
        g0 = other.value
        if abs(g0) < DIV_EPS:
            raise_div_zero()
        # from f = h*g, solved slot by slot
        h0 = self.value / g0
        h1 = (self.d1 - h0 * other.d1) / g0
        h2 = (self.d2 - h0 * other.d2) / g0
        h12 = (self.d12 - h1 * other.d2 - h2 * other.d1 - h0 * other.d12) / g0
        return HyperDual(h0, h1, h2, h12)

    def __rtruediv__(self, other):
        if isinstance(other, numbers.Real):
            return HyperDual(other).__truediv__(self)
        return NotImplemented

    def __pow__(self, k):
        if isinstance(k, float) and k.is_integer():
            k = int(k)
        if not isinstance(k, numbers.Integral) or k < 0:
            raise TypeError("HyperDual supports only non-negative integer powers")
        k = int(k)
        if k == 0:
            return HyperDual(1.0)
        if k == 1:
            return HyperDual(self.value, self.d1, self.d2, self.d12)
        v = self.value
        dk = k * v ** (k - 1)
        ddk = k * (k - 1) * v ** (k - 2)
        return HyperDual(
            v ** k,
            dk * self.d1,
            dk * self.d2,
            dk * self.d12 + ddk * self.d1 * self.d2,
        )


def raise_div_zero():
    from .errors import DivisionByZero

    raise DivisionByZero("division by a hyper-dual number with zero value")


def lift_const(c) -> HyperDual:
    return HyperDual(float(c))


def seed(c, slot=BOTH) -> HyperDual:
    if slot not in (FIRST, SECOND, BOTH):
        raise ValueError(f"unknown seed slot {slot!r}")
    return HyperDual(
        float(c),
        1.0 if slot in (FIRST, BOTH) else 0.0,
        1.0 if slot in (SECOND, BOTH) else 0.0,
        0.0,
    )


def arith(lhs, rhs, op):
    """Apply ``op`` (one of ``+ - * / ^``) in the truncated Taylor algebra."""
    if op == "+":
        return lhs + rhs
    if op in ("-", "−"):
        return lhs - rhs
    if op in ("*", "×"):
        return lhs * rhs
    if op in ("/", "÷"):
        return lhs / rhs
    if op in ("^", "**", "pow_int"):
        return lhs ** rhs
    raise ValueError(f"unknown operator {op!r}")


def value_of(v):
    return v.value if isinstance(v, HyperDual) else v
