"""How much past history / future horizon a formula needs."""
from __future__ import annotations

from .syntax import (
    FUTURE_OPS,
    PAST_OPS,
    Always,
    And,
    Atom,
    Eventually,
    Formula,
    Historically,
    Not,
    Once,
    Or,
    Since,
    Time,
    Top,
    Until,
)


class TemporalDirectionError(ValueError):
    pass


def _length(node: Formula, allowed, forbidden, what: str) -> Time:
    if isinstance(node, (Top, Atom)):
        return 0
    if isinstance(node, Not):
        return _length(node.arg, allowed, forbidden, what)
    if isinstance(node, (And, Or)):
        return max(_length(node.left, allowed, forbidden, what),
                   _length(node.right, allowed, forbidden, what))
    if isinstance(node, forbidden):
        raise TemporalDirectionError(f"{what}: {type(node).__name__} operator not allowed in {node}")
    if isinstance(node, (Until, Since)):
        inner = max(_length(node.left, allowed, forbidden, what),
                    _length(node.right, allowed, forbidden, what))
        return inner + node.interval.hi
    if isinstance(node, allowed):
        return _length(node.arg, allowed, forbidden, what) + node.interval.hi
    raise TypeError(f"not a formula node: {node!r}")


def necessary_length(psi: Formula) -> Time:
    """History length a past-time formula needs to be evaluable.

    ||pi|| = 0, ||!psi|| = ||psi||, binary connectives take the max, and
    Once/Historically/Since over [t1, t2) add t2 to their operand(s).
    """
    return _length(psi, (Once, Historically), FUTURE_OPS, "necessary_length")


def required_horizon(phi: Formula) -> Time:
    """Future-time dual of :func:`necessary_length` (Until/Eventually/Always)."""
    return _length(phi, (Eventually, Always), PAST_OPS, "required_horizon")
