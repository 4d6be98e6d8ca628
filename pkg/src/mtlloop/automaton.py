"""One-clock alternating timed automata for sequential reach-avoid formulas.

The supported fragment is::

    F[I1](p1 & F[I2](p2 & ... F[In] pn)) & G[J1] !a1 & ... & G[Jm] !am

The progress obligations form one chain, so "the current location" of a run
is well defined: it is the furthest chain location the automaton can occupy.
Safety conjuncts are monitored alongside the chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .logic.predicates import Metric, PredicateMap
from .logic.syntax import (
    Always,
    Atom,
    Eventually,
    Formula,
    Interval,
    Not,
    conjuncts,
    fmt_time,
    pretty,
)
from .traces import TimedTrace


class FragmentError(ValueError):
    """The formula is outside the sequential reach-avoid fragment."""

    def __init__(self, message: str, subformula: Formula | None = None):
        self.subformula = subformula
        if subformula is not None:
            message = f"{message}: {pretty(subformula)}"
        super().__init__(f"formula outside sequential fragment ({message})")


# ------------------------------------------------------ transition formulas


class TransitionFormula:
    __slots__ = ()

    def __and__(self, other):
        return TAnd(self, other)

    def __or__(self, other):
        return TOr(self, other)


@dataclass(frozen=True)
class TTrue(TransitionFormula):
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class TFalse(TransitionFormula):
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class TLoc(TransitionFormula):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class TClock(TransitionFormula):
    op: str  # one of <, <=, >, >=
    bound: Fraction

    def __post_init__(self):
        if self.op not in ("<", "<=", ">", ">="):
            raise ValueError(f"bad clock comparison {self.op!r}")

    def holds(self, c) -> bool:
        return {"<": c < self.bound, "<=": c <= self.bound,
                ">": c > self.bound, ">=": c >= self.bound}[self.op]

    def __str__(self):
        return f"c {self.op} {fmt_time(self.bound)}"


@dataclass(frozen=True)
class TReset(TransitionFormula):
    body: TransitionFormula

    def __str__(self):
        return f"c.({self.body})"


@dataclass(frozen=True)
class TAnd(TransitionFormula):
    left: TransitionFormula
    right: TransitionFormula

    def __str__(self):
        return f"{_wrap(self.left, TOr)} & {_wrap(self.right, TOr)}"


@dataclass(frozen=True)
class TOr(TransitionFormula):
    left: TransitionFormula
    right: TransitionFormula

    def __str__(self):
        return f"{self.left} | {self.right}"


def _wrap(node, loose) -> str:
    return f"({node})" if isinstance(node, loose) else str(node)


def _all(*parts: TransitionFormula) -> TransitionFormula:
    parts = [p for p in parts if not isinstance(p, TTrue)]
    if not parts:
        return TTrue()
    out = parts[0]
    for p in parts[1:]:
        out = TAnd(out, p)
    return out


# ----------------------------------------------------------------- types


@dataclass(frozen=True)
class SequentialSpec:
    chain: tuple[tuple[str, Interval], ...]
    safety: tuple[tuple[str, Interval], ...] = ()

    def __post_init__(self):
        if len(self.chain) < 1:
            raise FragmentError("the reach chain needs at least one target")

    @property
    def n(self) -> int:
        return len(self.chain)

    def predicates(self) -> list[str]:
        seen = []
        for name, _ in self.chain + self.safety:
            if name not in seen:
                seen.append(name)
        return seen


@dataclass
class Ocata:
    """(AP, L, l0, F, Delta); Delta is keyed by (location, literal)."""

    ap: tuple[str, ...]
    locations: tuple[str, ...]
    initial: str
    accepting: frozenset[str]
    delta: dict[tuple[str, str], TransitionFormula]
    # locations started in conjunction with the initial one (safety monitors)
    co_initial: tuple[str, ...] = ()

    def __post_init__(self):
        if self.initial not in self.locations:
            raise ValueError(f"initial location {self.initial!r} not in locations")
        if not self.accepting <= set(self.locations):
            raise ValueError("accepting set is not a subset of the locations")
        for loc, _ in self.delta:
            if loc not in self.locations:
                raise ValueError(f"transition from unknown location {loc!r}")

    def dump(self) -> str:
        lines = [
            "ocata",
            f"ap: {' '.join(self.ap)}",
            f"locations: {' '.join(self.locations)}",
            f"initial: {self.initial}",
            f"initial_configuration: {' & '.join((self.initial,) + self.co_initial)}",
            f"accepting: {' '.join(l for l in self.locations if l in self.accepting)}",
            "delta:",
        ]
        for (loc, lit), gamma in self.delta.items():
            lines.append(f"  {loc}, {lit}: {gamma}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LocationState:
    location: int
    clock: Fraction
    entry_time: Fraction


@dataclass
class StepRecord:
    index: int
    time: Fraction
    state: LocationState
    fired: tuple[int, ...]  # locations entered at this step
    spatial_margin: float  # min |signed distance| over the predicate tests that mattered
    time_slack: float  # time left before the current location's deadline
    margin: float
    safety_margin: float


@dataclass
class Run:
    spec: SequentialSpec
    steps: list[StepRecord] = field(default_factory=list)
    deadline_violation: int | None = None  # step index at which progress became impossible
    safety_violations: list[tuple[int, str]] = field(default_factory=list)
    reached: bool = False

    @property
    def accepted(self) -> bool:
        return self.reached and not self.safety_violations

    @property
    def locations(self) -> list[int]:
        return [s.state.location for s in self.steps]

    def transitions(self) -> list[tuple[int, int]]:
        """(step index, location entered) pairs."""
        return [(s.index, j) for s in self.steps for j in s.fired]

    @property
    def min_spatial_margin(self) -> float:
        return min((s.spatial_margin for s in self.steps), default=math.inf)

    @property
    def min_margin(self) -> float:
        return min((s.margin for s in self.steps), default=math.inf)


# ------------------------------------------------------------ construction


def _as_atom(node: Formula, where: Formula) -> str:
    if not isinstance(node, Atom):
        raise FragmentError("expected an atomic predicate", where)
    return node.name


def _parse_chain(node: Formula) -> list[tuple[str, Interval]]:
    if not isinstance(node, Eventually):
        raise FragmentError("expected an Eventually operator", node)
    body = node.arg
    if isinstance(body, Atom):
        return [(body.name, node.interval)]
    parts = conjuncts(body)
    atoms_ = [p for p in parts if isinstance(p, Atom)]
    rest = [p for p in parts if not isinstance(p, Atom)]
    if len(atoms_) != 1 or len(rest) != 1:
        raise FragmentError("chain step must be 'p & F[I] ...'", body)
    return [(atoms_[0].name, node.interval)] + _parse_chain(rest[0])


def parse_sequential(phi: Formula) -> SequentialSpec:
    chain = None
    safety = []
    for part in conjuncts(phi):
        if isinstance(part, Always):
            if not isinstance(part.arg, Not):
                raise FragmentError("safety conjunct must be G[I] !p", part)
            safety.append((_as_atom(part.arg.arg, part), part.interval))
        elif isinstance(part, Eventually):
            if chain is not None:
                raise FragmentError("more than one reach chain", part)
            chain = _parse_chain(part)
        else:
            raise FragmentError("unsupported conjunct", part)
    if chain is None:
        raise FragmentError("no reach chain (need at least one F[I] target)", phi)
    return SequentialSpec(tuple(chain), tuple(safety))


def location_names(spec: SequentialSpec) -> list[str]:
    return [f"l{j}" for j in range(spec.n + 1)]


def build_ocata(spec: SequentialSpec) -> Ocata:
    progress = location_names(spec)
    safe = [f"safe_{name}" if sum(1 for n, _ in spec.safety if n == name) == 1 else f"safe{i}_{name}"
            for i, (name, _) in enumerate(spec.safety)]
    delta: dict[tuple[str, str], TransitionFormula] = {}
    for j, (pred, iv) in enumerate(spec.chain, start=1):
        here, nxt = progress[j - 1], progress[j]
        before_deadline = TTrue() if math.isinf(iv.hi) else TClock("<", iv.hi)
        fire = _all(TClock(">=", iv.lo), before_deadline, TReset(TLoc(nxt)))
        wait = _all(before_deadline, TLoc(here))
        delta[(here, pred)] = TOr(fire, wait)
        delta[(here, f"!{pred}")] = wait
    last_pred = spec.chain[-1][0]
    delta[(progress[-1], last_pred)] = TTrue()
    delta[(progress[-1], f"!{last_pred}")] = TTrue()
    for loc, (pred, iv) in zip(safe, spec.safety):
        done = TFalse() if math.isinf(iv.hi) else TClock(">=", iv.hi)
        early = TFalse() if iv.lo == 0 else _all(TClock("<", iv.lo), TLoc(loc))
        alive = _all(TTrue() if math.isinf(iv.hi) else TClock("<", iv.hi), TLoc(loc))
        delta[(loc, pred)] = _simplify_or(early, done)
        delta[(loc, f"!{pred}")] = _simplify_or(alive, done)
    return Ocata(
        ap=tuple(spec.predicates()),
        locations=tuple(progress + safe),
        initial=progress[0],
        accepting=frozenset([progress[-1]] + safe),
        delta=delta,
        co_initial=tuple(safe),
    )


def _simplify_or(a: TransitionFormula, b: TransitionFormula) -> TransitionFormula:
    if isinstance(a, TFalse):
        return b
    if isinstance(b, TFalse):
        return a
    return TOr(a, b)


# --------------------------------------------------------------- tracking


class LocationTracker:
    """Incremental run of the chain automaton over a q trace.

    ``anchors[j]`` holds the live times at which the automaton could have
    entered location j (the clock values of its configuration set).  The
    reported location is the furthest location ever occupied, entered at the
    first sample where that became possible; its clock restarts there.
    """

    def __init__(self, spec: SequentialSpec, pmap: PredicateMap, metric: Metric):
        self.spec = spec
        self.pmap = pmap
        self.metric = metric
        for name in spec.predicates():
            pmap[name].check_metric(metric)
        self.run = Run(spec)
        self.anchors: list[list[Fraction]] = [[] for _ in range(spec.n + 1)]
        self.t0: Fraction | None = None
        self.location = 0
        self.entry_time: Fraction | None = None
        self.k = 0

    @property
    def state(self) -> LocationState:
        return self.run.steps[-1].state

    def step(self, t: Fraction, q) -> StepRecord:
        spec = self.spec
        if self.t0 is None:
            self.t0 = t
            self.entry_time = t
            self.anchors[0] = [t]
        preds = [self.pmap[name] for name, _ in spec.chain]
        spatial = math.inf
        fired = []
        for j in range(1, spec.n + 1):
            if self.location >= spec.n:
                break
            iv = spec.chain[j - 1][1]
            if not any(iv.contains(t - a) for a in self.anchors[j - 1]):
                continue
            pred = preds[j - 1]
            inside = bool(pred.contains(q)[0])
            spatial = min(spatial, abs(float(pred.signed_distances(q, self.metric)[0])))
            if inside:
                self.anchors[j].append(t)
                if j > self.location:
                    self.location = j
                    self.entry_time = t
                    fired.append(j)
        if self.anchors[spec.n]:
            self.run.reached = True
        # drop anchors whose next deadline has passed
        for j in range(spec.n):
            hi = spec.chain[j][1].hi
            self.anchors[j] = [a for a in self.anchors[j] if t - a < hi]
        if (not self.run.reached and self.run.deadline_violation is None
                and not any(self.anchors[:spec.n])):
            self.run.deadline_violation = self.k
        safety_margin = math.inf
        for name, iv in spec.safety:
            if iv.contains(t - self.t0):
                pred = self.pmap[name]
                safety_margin = min(safety_margin, -float(pred.signed_distances(q, self.metric)[0]))
                if bool(pred.contains(q)[0]):
                    self.run.safety_violations.append((self.k, name))
        clock = t - self.entry_time
        if self.location < spec.n:
            hi = spec.chain[self.location][1].hi
            slack = math.inf if math.isinf(hi) else float(hi - clock)
        else:
            slack = math.inf
        rec = StepRecord(self.k, t, LocationState(self.location, clock, self.entry_time),
                         tuple(fired), spatial, slack, min(spatial, slack), safety_margin)
        self.run.steps.append(rec)
        self.k += 1
        return rec


def track_location(spec: SequentialSpec, q: TimedTrace, pmap: PredicateMap, metric: Metric) -> Run:
    tracker = LocationTracker(spec, pmap, metric)
    for t, row in zip(q.times, q.states):
        tracker.step(t, row)
    return tracker.run
