"""Boolean and robust semantics of MTL over discrete-time traces.

Quantifier windows that run past either end of the trace range over the
samples that exist; an empty existential window is false (-inf), an empty
universal window is true (+inf).
"""
from __future__ import annotations

import math
from bisect import bisect_left, bisect_right

import numpy as np

from ..traces import TimedTrace
from .predicates import Metric, PredicateMap, signed_distance
from .syntax import (
    Always,
    And,
    Atom,
    Eventually,
    Formula,
    Historically,
    Interval,
    Not,
    Once,
    Or,
    Since,
    Top,
    Until,
)

INF = math.inf


def future_window(times, k: int, interval: Interval) -> tuple[int, int]:
    """Index range [start, stop) of k' with t(k') - t(k) in the interval."""
    t = times[k]
    start = bisect_left(times, t + interval.lo)
    stop = len(times) if math.isinf(interval.hi) else bisect_left(times, t + interval.hi)
    return start, stop


def past_window(times, k: int, interval: Interval) -> tuple[int, int]:
    """Index range [start, stop) of k' with t(k) - t(k') in the interval."""
    t = times[k]
    start = 0 if math.isinf(interval.hi) else bisect_right(times, t - interval.hi)
    stop = bisect_right(times, t - interval.lo)
    return start, stop


class _Lattice:
    """Operations of the value domain: booleans or extended reals."""

    def __init__(self, robust: bool):
        self.robust = robust
        if robust:
            self.top, self.bottom, self.dtype = INF, -INF, float
        else:
            self.top, self.bottom, self.dtype = True, False, bool

    def neg(self, a):
        return -a if self.robust else ~a


_ROBUST = _Lattice(True)
_BOOLEAN = _Lattice(False)


class _Evaluator:
    """Bottom-up evaluation of every subformula at every index (one pass)."""

    def __init__(self, trace: TimedTrace, pmap: PredicateMap | None, metric: Metric | None,
                 lattice: _Lattice):
        self.trace = trace
        self.times = trace.times
        self.n = len(trace)
        self.pmap = pmap
        self.metric = metric
        self.lat = lattice
        self.memo: dict[int, np.ndarray] = {}
        self._keep: list[Formula] = []  # pins ids used as memo keys

    def signal(self, node: Formula) -> np.ndarray:
        key = id(node)
        hit = self.memo.get(key)
        if hit is None:
            hit = self._compute(node)
            self.memo[key] = hit
            self._keep.append(node)
        return hit

    def _atom(self, name: str) -> np.ndarray:
        if self.pmap is None:
            raise KeyError(f"unresolved atomic predicate {name!r} (no predicate map)")
        pred = self.pmap[name]
        if self.lat.robust:
            if self.metric is None:
                raise ValueError("robust semantics need a metric")
            return pred.signed_distances(self.trace.states, self.metric)
        return pred.contains(self.trace.states)

    def _compute(self, node: Formula) -> np.ndarray:
        lat = self.lat
        if isinstance(node, Top):
            return np.full(self.n, lat.top, dtype=lat.dtype)
        if isinstance(node, Atom):
            return self._atom(node.name)
        if isinstance(node, Not):
            return lat.neg(self.signal(node.arg))
        if isinstance(node, And):
            a, b = self.signal(node.left), self.signal(node.right)
            return np.minimum(a, b) if lat.robust else a & b
        if isinstance(node, Or):
            a, b = self.signal(node.left), self.signal(node.right)
            return np.maximum(a, b) if lat.robust else a | b
        if isinstance(node, Eventually):
            return self._windowed(self.signal(node.arg), node.interval, future_window, True)
        if isinstance(node, Always):
            return self._windowed(self.signal(node.arg), node.interval, future_window, False)
        if isinstance(node, Once):
            return self._windowed(self.signal(node.arg), node.interval, past_window, True)
        if isinstance(node, Historically):
            return self._windowed(self.signal(node.arg), node.interval, past_window, False)
        if isinstance(node, Until):
            return self._until(self.signal(node.left), self.signal(node.right), node.interval)
        if isinstance(node, Since):
            return self._since(self.signal(node.left), self.signal(node.right), node.interval)
        raise TypeError(f"not a formula node: {node!r}")

    def _windowed(self, sig, interval, window, existential: bool) -> np.ndarray:
        lat = self.lat
        out = np.empty(self.n, dtype=lat.dtype)
        for k in range(self.n):
            s, e = window(self.times, k, interval)
            if s >= e:
                out[k] = lat.bottom if existential else lat.top
            elif lat.robust:
                out[k] = sig[s:e].max() if existential else sig[s:e].min()
            else:
                out[k] = sig[s:e].any() if existential else sig[s:e].all()
        return out

    def _until(self, s1, s2, interval) -> np.ndarray:
        lat = self.lat
        join, meet = (max, min) if lat.robust else (_or, _and)
        out = np.empty(self.n, dtype=lat.dtype)
        for k in range(self.n):
            start, stop = future_window(self.times, k, interval)
            best = lat.bottom
            run = lat.top  # meet of s1 over [k, k')
            for kp in range(k, stop):
                if kp >= start:
                    best = join(best, meet(s2[kp], run))
                run = meet(run, s1[kp])
            out[k] = best
        return out

    def _since(self, s1, s2, interval) -> np.ndarray:
        lat = self.lat
        join, meet = (max, min) if lat.robust else (_or, _and)
        out = np.empty(self.n, dtype=lat.dtype)
        for k in range(self.n):
            start, stop = past_window(self.times, k, interval)
            best = lat.bottom
            run = lat.top  # meet of s1 over [k', k)
            for kp in range(k, start - 1, -1):
                if kp < k:
                    run = meet(run, s1[kp])
                if kp < stop:
                    best = join(best, meet(s2[kp], run))
            out[k] = best
        return out


def _or(a, b):
    return bool(a) or bool(b)


def _and(a, b):
    return bool(a) and bool(b)


def _check_index(trace: TimedTrace, k: int) -> None:
    if not 0 <= k < len(trace):
        raise IndexError(f"index {k} out of range for trace of length {len(trace)}")


def robust_signal(phi: Formula, trace: TimedTrace, pmap: PredicateMap | None,
                  metric: Metric | None) -> np.ndarray:
    """[[phi]](x, k) for every k."""
    return _Evaluator(trace, pmap, metric, _ROBUST).signal(phi).astype(float)


def boolean_signal(phi: Formula, trace: TimedTrace, pmap: PredicateMap | None) -> np.ndarray:
    """<<phi>>(x, k) for every k."""
    return _Evaluator(trace, pmap, None, _BOOLEAN).signal(phi).astype(bool)


def eval_robust(phi: Formula, trace: TimedTrace, k: int, pmap: PredicateMap | None,
                metric: Metric | None) -> float:
    _check_index(trace, k)
    return float(robust_signal(phi, trace, pmap, metric)[k])


def eval_boolean(phi: Formula, trace: TimedTrace, k: int, pmap: PredicateMap | None,
                 metric: Metric | None = None) -> bool:
    _check_index(trace, k)
    return bool(boolean_signal(phi, trace, pmap)[k])


def eval_robust_oracle(phi: Formula, trace: TimedTrace, k: int, pmap: PredicateMap | None,
                       metric: Metric | None) -> float:
    """Direct transliteration of the recursive robust semantics.

    No memoization and no window search: every quantifier walks the trace
    from the evaluation index and tests interval membership on timestamp
    differences, keeping the running minimum of the left operand.  Only
    meant for small inputs in tests.
    """
    _check_index(trace, k)
    t = trace.times
    n = len(trace)

    def rho(f: Formula, i: int) -> float:
        if isinstance(f, Top):
            return INF
        if isinstance(f, Atom):
            if pmap is None:
                raise KeyError(f"unresolved atomic predicate {f.name!r} (no predicate map)")
            return signed_distance(trace.states[i], pmap[f.name], metric)
        if isinstance(f, Not):
            return -rho(f.arg, i)
        if isinstance(f, And):
            return min(rho(f.left, i), rho(f.right, i))
        if isinstance(f, Or):
            return max(rho(f.left, i), rho(f.right, i))
        if isinstance(f, Eventually):
            return rho(Until(Top(), f.arg, f.interval), i)
        if isinstance(f, Always):
            return rho(Not(Eventually(Not(f.arg), f.interval)), i)
        if isinstance(f, Once):
            return rho(Since(Top(), f.arg, f.interval), i)
        if isinstance(f, Historically):
            return rho(Not(Once(Not(f.arg), f.interval)), i)
        if isinstance(f, Until):
            # k' runs forward from i; `inner` is the min of the left operand
            # over t(i) <= t(k'') < t(k')
            best, inner = -INF, INF
            for j in range(i, n):
                if f.interval.contains(t[j] - t[i]):
                    best = max(best, min(rho(f.right, j), inner))
                inner = min(inner, rho(f.left, j))
            return best
        if isinstance(f, Since):
            # k' runs backward from i; `inner` is the min over t(k') <= t(k'') < t(i)
            best, inner = -INF, INF
            for j in range(i, -1, -1):
                if j < i:
                    inner = min(inner, rho(f.left, j))
                if f.interval.contains(t[i] - t[j]):
                    best = max(best, min(rho(f.right, j), inner))
            return best
        raise TypeError(f"not a formula node: {f!r}")

    return rho(phi, k)


def trace_distance(a: TimedTrace, b: TimedTrace, metric: Metric) -> float:
    """d_O(a, b) = max_k d(a(k), b(k))."""
    if len(a) != len(b) or a.times != b.times:
        raise ValueError("traces must have identical timestamps")
    if a.dim != b.dim or a.dim != metric.dim:
        raise ValueError(f"dimension mismatch ({a.dim}, {b.dim}, metric {metric.dim})")
    return float(metric.norms(a.states - b.states).max())
