"""Discrete-time linear plant and the classifier-in-the-loop system."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .automaton import LocationState, LocationTracker, Run
from .logic.predicates import Metric
from .logic.semantics import boolean_signal, eval_boolean, robust_signal
from .traces import TimedTrace

if TYPE_CHECKING:
    from .inference import Classifier
    from .scenario import Scenario


class ClassifierError(RuntimeError):
    """The classifier cannot choose an input (uncovered location or broken partition)."""


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    """x(k+1) = A x(k) + B u(k) with u drawn from a finite input set."""

    A: np.ndarray
    B: np.ndarray
    inputs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        a = np.array(self.A, dtype=float)
        b = np.array(self.B, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError(f"B must have {a.shape[0]} rows, got {b.shape}")
        inputs = tuple(tuple(float(v) for v in u) for u in self.inputs)
        if not inputs:
            raise ValueError("input set is empty")
        if any(len(u) != b.shape[1] for u in inputs):
            raise ValueError(f"inputs must have length {b.shape[1]}")
        if len(set(inputs)) != len(inputs):
            raise ValueError("input set has duplicate elements")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "inputs", inputs)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def input_index(self, u) -> int:
        key = tuple(float(v) for v in np.asarray(u, dtype=float).ravel())
        try:
            return self.inputs.index(key)
        except ValueError:
            raise InputError(f"input {list(key)} is not in the input set") from None

    def step(self, x, u) -> np.ndarray:
        """A x + B u; products first, then their sum (pinned order)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state must have shape ({self.n},), got {x.shape}")
        ax = _matvec(self.A, x)
        bu = _matvec(self.B, u)
        return ax + bu


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    # row-major inner products with left-to-right accumulation
    out = np.empty(m.shape[0])
    for i in range(m.shape[0]):
        acc = 0.0
        for j in range(m.shape[1]):
            acc += m[i, j] * v[j]
        out[i] = acc
    return out


def simulate_open_loop(sys: LinearSystem, x0, u: Sequence, K: int, times=None) -> TimedTrace:
    """xi(.; x0, u): K steps of the plant under the recorded inputs."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if len(u) < K:
        raise ValueError(f"need {K} inputs, got {len(u)}")
    x = np.asarray(x0, dtype=float)
    states = [x]
    for k in range(K):
        sys.input_index(u[k])
        x = sys.step(x, u[k])
        states.append(x)
    if times is None:
        times = range(K + 1)
    return TimedTrace(list(times)[: K + 1], np.array(states))


def state_propagation_bound(sys: LinearSystem, metric: Metric, K: int) -> float:
    """max_{0<=k<=K} ||A^k||_M, the M-induced operator norm of the powers of A."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    r = metric.factor
    r_inv = np.linalg.inv(r)
    power = np.eye(sys.n)
    best = 1.0
    for _ in range(K):
        power = sys.A @ power
        best = max(best, float(np.linalg.norm(r @ power @ r_inv, 2)))
    return best


# ------------------------------------------------------------ closed loop


@dataclass
class DecisionTable:
    """Per-location branch truth values and robustness over a whole h trace.

    The environment does not react to the agent, so every branch formula can
    be evaluated once per simulation.
    """

    truth: dict[int, np.ndarray]  # location -> (branches, n) bool
    robust: dict[int, np.ndarray]  # location -> (branches, n) float


def decision_table(classifier: "Classifier", h: TimedTrace) -> DecisionTable:
    truth, robust = {}, {}
    for loc, branches in classifier.locations.items():
        truth[loc] = np.array([boolean_signal(b.formula, h, classifier.pmap) for b in branches])
        robust[loc] = np.array([robust_signal(b.formula, h, classifier.pmap, classifier.metric)
                                for b in branches])
    return DecisionTable(truth, robust)


@dataclass
class StepDecision:
    next_state: np.ndarray
    input: tuple[float, ...]
    branch: int
    margin: float


def step_closed_loop(sys: LinearSystem, classifier: "Classifier", location: LocationState | int,
                     env_history: TimedTrace, x, k: int,
                     table: DecisionTable | None = None) -> StepDecision:
    """One step of the loop: pick the branch whose formula holds at env index k.

    ``k`` indexes ``env_history`` (which includes the pre-zero history rows).
    """
    loc = location.location if isinstance(location, LocationState) else int(location)
    branches = classifier.locations.get(loc)
    if not branches:
        raise ClassifierError(f"location l{loc} not covered by classifier")
    if table is None:
        table = decision_table(classifier, env_history)
    fires = np.flatnonzero(table.truth[loc][:, k])
    if len(fires) != 1:
        raise ClassifierError(
            f"{len(fires)} branch formulas hold at location l{loc}, step {k}; expected exactly one"
        )
    j = int(fires[0])
    u = branches[j].input
    return StepDecision(sys.step(x, u), u, j, float(table.robust[loc][j, k]))


@dataclass
class SimulationResult:
    agent: TimedTrace
    inputs: list[tuple[float, ...]]
    branches: list[int]
    margins: list[float]
    run: Run
    q: TimedTrace
    robustness: float
    satisfied: bool
    robustness_signal: np.ndarray = field(repr=False, default=None)

    @property
    def min_margin(self) -> float:
        return min(self.margins, default=math.inf)


def simulate_closed_loop(scenario: "Scenario", classifier: "Classifier", x0, h: TimedTrace,
                         K: int, table: DecisionTable | None = None) -> SimulationResult:
    """Run the classifier-in-the-loop system for K steps on feature trace h.

    ``h`` starts with ``scenario.history`` rows of pre-t(0) history; the plant
    inherits its timestamps from the samples after them.
    """
    sys = scenario.system
    start = scenario.history
    if len(h) < start + K + 1:
        raise ValueError(
            f"environment trace has {len(h)} samples; need {start} history + {K + 1}"
        )
    if table is None:
        table = decision_table(classifier, h)
    tracker = LocationTracker(scenario.sequential, scenario.pmap, scenario.q_metric)
    x = np.asarray(x0, dtype=float)
    states, inputs, branches, margins, qs = [x], [], [], [], []
    for k in range(K + 1):
        t = h.times[start + k]
        q = scenario.qmap(x, h.states[start + k])
        qs.append(q)
        rec = tracker.step(t, q)
        if k == K:
            break
        d = step_closed_loop(sys, classifier, rec.state, h, x, start + k, table)
        x = d.next_state
        states.append(x)
        inputs.append(d.input)
        branches.append(d.branch)
        margins.append(d.margin)
    times = h.times[start: start + K + 1]
    agent = TimedTrace(times, np.array(states), scenario.state_names)
    q_trace = TimedTrace(times, np.array(qs), scenario.q_names)
    rob = robust_signal(scenario.phi, q_trace, scenario.pmap, scenario.q_metric)
    sat = eval_boolean(scenario.phi, q_trace, 0, scenario.pmap)
    return SimulationResult(agent, inputs, branches, margins, tracker.run, q_trace,
                            float(rob[0]), sat, rob)
