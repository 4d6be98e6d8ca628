"""Seeded random formulas and traces for the counted acceptance suites."""
import math
from fractions import Fraction

import numpy as np

from mtlloop.logic import (
    Always,
    And,
    Atom,
    Eventually,
    Historically,
    Interval,
    Not,
    Once,
    Or,
    Since,
    Top,
    Until,
)
from mtlloop.traces import TimedTrace

UNARY = (Eventually, Always, Once, Historically)


def random_interval(rng: np.random.Generator, max_hi: int = 6) -> Interval:
    lo = int(rng.integers(0, max_hi))
    if rng.random() < 0.1:
        return Interval(Fraction(lo, 2), math.inf)
    hi = int(rng.integers(lo + 1, max_hi + 1))
    return Interval(Fraction(lo, 2), Fraction(hi, 2))


def random_formula(rng: np.random.Generator, depth: int = 4, atoms=("a", "b", "c")):
    """Formula of nesting depth at most ``depth`` (leaves count as depth 1)."""
    if depth <= 1 or rng.random() < 0.2:
        return Top() if rng.random() < 0.1 else Atom(str(rng.choice(atoms)))
    kind = int(rng.integers(0, 6))
    sub = lambda: random_formula(rng, depth - 1, atoms)  # noqa: E731
    if kind == 0:
        return Not(sub())
    if kind == 1:
        return And(sub(), sub())
    if kind == 2:
        return Or(sub(), sub())
    if kind == 3:
        return UNARY[int(rng.integers(0, 4))](sub(), random_interval(rng))
    if kind == 4:
        return Until(sub(), sub(), random_interval(rng))
    return Since(sub(), sub(), random_interval(rng))


def random_trace(rng: np.random.Generator, dim: int = 2, max_len: int = 20) -> TimedTrace:
    """Irregular half-unit timestamps, continuous values in [-4, 4]."""
    n = int(rng.integers(1, max_len + 1))
    gaps = rng.integers(1, 4, size=n)
    t0 = int(rng.integers(-3, 4))
    times = [Fraction(t0) + Fraction(int(gaps[:i].sum()), 2) for i in range(n)]
    return TimedTrace(times, rng.uniform(-4, 4, size=(n, dim)))


def inside_ball(rng: np.random.Generator, factor: np.ndarray, radius: float, size: int):
    """Points with ||factor @ v|| < radius, uniform in the ellipsoid."""
    d = factor.shape[0]
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / d)
    return np.linalg.solve(factor, (g * r[:, None]).T).T
