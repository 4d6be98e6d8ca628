"""MTL abstract syntax: intervals, formula nodes and the pretty-printer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterator, Union

Time = Union[Fraction, float]  # float only ever for +inf

INF = math.inf


def to_time(value) -> Time:
    """Exact time from a decimal string / int / Fraction; 'inf' gives +inf."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        if math.isinf(value) and value > 0:
            return INF
        # floats are only accepted when they are exact decimals as written
        return Fraction(repr(value))
    if isinstance(value, int):
        return Fraction(value)
    text = str(value).strip()
    if text in ("inf", "+inf", "Infinity"):
        return INF
    return Fraction(text)


def fmt_time(value: Time) -> str:
    """Render an exact time as a decimal literal."""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        value = Fraction(repr(value))
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives)
    with localcontext() as ctx:
        ctx.prec = len(str(abs(value.numerator))) + digits + 5
        text = format(Decimal(value.numerator) / Decimal(value.denominator), "f")
    return text.rstrip("0").rstrip(".") if "." in text else text


@dataclass(frozen=True)
class Interval:
    """Half-open time interval [lo, hi)."""

    lo: Time
    hi: Time

    def __post_init__(self):
        object.__setattr__(self, "lo", to_time(self.lo))
        object.__setattr__(self, "hi", to_time(self.hi))
        if isinstance(self.lo, float):
            raise ValueError("interval lower bound must be finite")
        if self.lo < 0:
            raise ValueError(f"interval lower bound {fmt_time(self.lo)} is negative")
        if not self.lo < self.hi:
            raise ValueError(
                f"malformed interval [{fmt_time(self.lo)},{fmt_time(self.hi)}): lo >= hi"
            )

    def contains(self, dt: Fraction) -> bool:
        return self.lo <= dt < self.hi

    def __str__(self) -> str:
        return f"[{fmt_time(self.lo)},{fmt_time(self.hi)})"


class Formula:
    """Base class of MTL formula nodes."""

    __slots__ = ()

    def children(self) -> tuple["Formula", ...]:
        return ()

    def walk(self) -> Iterator["Formula"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children()))

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True, repr=False)
class Top(Formula):
    def __repr__(self):
        return "Top()"


@dataclass(frozen=True, repr=False)
class Atom(Formula):
    name: str

    def __repr__(self):
        return f"Atom({self.name!r})"


@dataclass(frozen=True, repr=False)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"Not({self.arg!r})"


@dataclass(frozen=True, repr=False)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"And({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Or({self.left!r}, {self.right!r})"


@dataclass(frozen=True, repr=False)
class Until(Formula):
    left: Formula
    right: Formula
    interval: Interval

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Until({self.left!r}, {self.right!r}, {self.interval})"


@dataclass(frozen=True, repr=False)
class Since(Formula):
    left: Formula
    right: Formula
    interval: Interval

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"Since({self.left!r}, {self.right!r}, {self.interval})"


@dataclass(frozen=True, repr=False)
class _Unary(Formula):
    arg: Formula
    interval: Interval

    def children(self):
        return (self.arg,)

    def __repr__(self):
        return f"{type(self).__name__}({self.arg!r}, {self.interval})"


class Eventually(_Unary):
    """F[a,b) phi, i.e. true U[a,b) phi."""


class Always(_Unary):
    """G[a,b) phi, i.e. !F[a,b) !phi."""


class Once(_Unary):
    """P[a,b) phi, i.e. true S[a,b) phi."""


class Historically(_Unary):
    """H[a,b) phi, i.e. !P[a,b) !phi."""


def false() -> Formula:
    return Not(Top())


FUTURE_OPS = (Until, Eventually, Always)
PAST_OPS = (Since, Once, Historically)

_PREFIX = {Eventually: "F", Always: "G", Once: "P", Historically: "H"}
_INFIX = {Until: "U", Since: "S"}

# binding strength used by the printer; mirrors the parser's grammar levels
_OR, _AND, _TEMPORAL, _UNARY, _ATOM = 1, 2, 3, 4, 5


def _prec(node: Formula) -> int:
    if isinstance(node, Or):
        return _OR
    if isinstance(node, And):
        return _AND
    if isinstance(node, (Until, Since)):
        return _TEMPORAL
    if isinstance(node, (Not, _Unary)) and not _is_false(node):
        return _UNARY
    return _ATOM


def _is_false(node: Formula) -> bool:
    return isinstance(node, Not) and isinstance(node.arg, Top)


def pretty(node: Formula) -> str:
    """Concrete syntax accepted by :func:`mtlloop.logic.parser.parse_formula`."""

    def wrap(child: Formula, minimum: int) -> str:
        text = pretty(child)
        return f"({text})" if _prec(child) < minimum else text

    if isinstance(node, Top):
        return "true"
    if _is_false(node):
        return "false"
    if isinstance(node, Atom):
        return node.name
    if isinstance(node, Not):
        return "!" + wrap(node.arg, _UNARY)
    if isinstance(node, _Unary):
        return f"{_PREFIX[type(node)]}{node.interval} " + wrap(node.arg, _UNARY)
    if isinstance(node, (Until, Since)):
        op = _INFIX[type(node)]
        return f"{wrap(node.left, _TEMPORAL)} {op}{node.interval} {wrap(node.right, _TEMPORAL + 1)}"
    if isinstance(node, And):
        return f"{wrap(node.left, _AND)} & {wrap(node.right, _AND + 1)}"
    if isinstance(node, Or):
        return f"{wrap(node.left, _OR)} | {wrap(node.right, _OR + 1)}"
    raise TypeError(f"not a formula node: {node!r}")


def atoms(node: Formula) -> set[str]:
    return {n.name for n in node.walk() if isinstance(n, Atom)}


def temporal_depth(node: Formula) -> int:
    return sum(1 for n in node.walk() if isinstance(n, (Until, Since, _Unary)))


def conjuncts(node: Formula) -> list[Formula]:
    """Flatten a tree of And nodes."""
    if isinstance(node, And):
        return conjuncts(node.left) + conjuncts(node.right)
    return [node]
