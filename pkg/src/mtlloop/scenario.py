"""Scenario configuration: one JSON file drives inference, simulation and verification.

Schema (numbers that are times may be given as decimal strings)::

    {
      "name": "lead-follow",
      "plant": {"A": [[...]], "B": [[...]], "inputs": [[...], ...], "state_names": ["px", "py"],
                "period": "1", "horizon": 40, "start_time": "0"},
      "environment": {"names": ["ox", "oy", "ov"], "history": 3},
      "features": {"select": [0, 1, 2], "names": [...], "lipschitz": 1},
      "q_map": {"matrix": [[...]], "offset": [...], "names": [...],
                "lipschitz_x": 1.5, "lipschitz_h": 1},
      "metrics": {"state": ..., "environment": ..., "features": ..., "q": ..., "input": ...},
      "predicates": {"r1": {"box": {"lower": [...], "upper": [...]}}, ...},
      "spec": "F[0,10)(r1 & F[0,15) r2) & G[0,40) !obs",
      "inference": {"epsilon": "0", "max_depth": 4, "max_window": "3",
                    "features": [0, 1, 2], "tradeoff": "equal", "ratio": 1}
    }

``features`` may instead hold ``{"affine": {"matrix": ..., "offset": ...}}``.
Omitted metrics default to the identity.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .automaton import SequentialSpec, parse_sequential
from .logic.lengths import required_horizon
from .logic.parser import parse_formula
from .logic.predicates import Metric, PredicateMap
from .logic.semantics import eval_boolean, eval_robust
from .logic.syntax import Formula, fmt_time, to_time
from .plant import InputError, LinearSystem, simulate_open_loop
from .traces import (
    DemonstrationSet,
    FeatureMap,
    QMap,
    TimedTrace,
    apply_feature_map,
    build_q_trace,
    read_demo_root,
)


class ScenarioError(ValueError):
    pass


class DemonstrationError(ValueError):
    pass


def _matrix(value, shape=None, what="matrix") -> np.ndarray:
    m = np.array(value, dtype=float)
    if shape is not None and m.shape != shape:
        raise ScenarioError(f"{what} must have shape {shape}, got {m.shape}")
    return m


def fingerprint(raw: Mapping) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class Scenario:
    name: str
    raw: dict
    system: LinearSystem
    period: Fraction
    horizon: int
    start_time: Fraction
    state_names: tuple[str, ...]
    env_names: tuple[str, ...]
    history: int
    H: FeatureMap
    feature_names: tuple[str, ...]
    qmap: QMap
    q_names: tuple[str, ...]
    state_metric: Metric
    env_metric: Metric
    feature_metric: Metric
    q_metric: Metric
    input_metric: Metric
    pmap: PredicateMap
    spec_text: str
    phi: Formula
    sequential: SequentialSpec
    epsilon: float
    max_depth: int
    max_window: Fraction
    grid_features: tuple[int, ...]
    tradeoff: str
    ratio: float

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.raw)

    @property
    def env_dim(self) -> int:
        return len(self.env_names)

    @property
    def feature_dim(self) -> int:
        return self.H.out_dim

    def input_distance(self, a, b) -> float:
        return self.input_metric.dist(a, b)

    def features(self, env: TimedTrace) -> TimedTrace:
        """h = H(y)."""
        if env.dim != self.env_dim:
            raise DemonstrationError(
                f"environment trace has dimension {env.dim}, scenario expects {self.env_dim}"
            )
        return apply_feature_map(self.H, env, self.feature_names)

    def q_trace(self, agent: TimedTrace, h: TimedTrace) -> TimedTrace:
        return build_q_trace(agent, h, self.qmap, self.q_names)

    def timeline(self, K: int | None = None) -> list[Fraction]:
        K = self.horizon if K is None else K
        return [self.start_time + self.period * k for k in range(K + 1)]

    def start_index(self, h: TimedTrace) -> int:
        try:
            i = h.index_of(self.start_time)
        except KeyError:
            raise DemonstrationError(
                f"environment trace has no sample at t={fmt_time(self.start_time)}"
            ) from None
        if i < self.history:
            raise DemonstrationError(
                f"environment trace has {i} history rows before t={fmt_time(self.start_time)}; "
                f"need {self.history}"
            )
        return i

    def env_window(self, h: TimedTrace, K: int | None = None) -> TimedTrace:
        """Trim a feature trace to exactly D history rows plus K+1 samples."""
        K = self.horizon if K is None else K
        i = self.start_index(h)
        if len(h) < i + K + 1:
            raise DemonstrationError(
                f"environment trace ends before t={fmt_time(self.timeline(K)[-1])}"
            )
        return h.slice(i - self.history, i + K + 1)


def _metric(raw: Mapping, key: str, dim: int) -> Metric:
    value = raw.get(key)
    try:
        metric = Metric.identity(dim) if value is None else Metric(value)
    except ValueError as exc:
        raise ScenarioError(f"metric {key!r}: {exc}") from None
    if metric.dim != dim:
        raise ScenarioError(f"metric {key!r} has dimension {metric.dim}, expected {dim}")
    return metric


def scenario_from_dict(raw: Mapping[str, Any]) -> Scenario:
    raw = json.loads(json.dumps(raw))  # detach and normalise
    try:
        plant = raw["plant"]
        system = LinearSystem(plant["A"], plant["B"], plant["inputs"])
        period = to_time(plant.get("period", "1"))
        if isinstance(period, float) or period <= 0:
            raise ScenarioError("plant period must be a positive decimal")
        horizon = int(plant["horizon"])
        start_time = to_time(plant.get("start_time", "0"))
        state_names = tuple(plant.get("state_names", [f"x{i + 1}" for i in range(system.n)]))
        if len(state_names) != system.n:
            raise ScenarioError("state_names do not match the state dimension")

        env = raw["environment"]
        env_names = tuple(env["names"])
        history = int(env["history"])
        if history < 0:
            raise ScenarioError("environment history must be >= 0")

        feats = raw.get("features", {"select": list(range(len(env_names)))})
        if "select" in feats:
            H = FeatureMap.select(feats["select"], len(env_names), float(feats.get("lipschitz", 1)))
            default_names = [env_names[i] for i in feats["select"]]
        elif "affine" in feats:
            aff = feats["affine"]
            H = FeatureMap.affine(aff["matrix"], aff.get("offset"), float(feats["lipschitz"]))
            if H.in_dim != len(env_names):
                raise ScenarioError("feature map input dimension differs from the environment")
            default_names = [f"h{i}" for i in range(H.out_dim)]
        else:
            raise ScenarioError("features need a 'select' or 'affine' entry")
        feature_names = tuple(feats.get("names", default_names))
        if len(feature_names) != H.out_dim:
            raise ScenarioError("feature names do not match the feature dimension")

        metrics = raw.get("metrics", {})
        mx = _metric(metrics, "state", system.n)
        my = _metric(metrics, "environment", len(env_names))
        mh = _metric(metrics, "features", H.out_dim)
        mu = _metric(metrics, "input", system.m)

        qraw = raw["q_map"]
        qmat = _matrix(qraw["matrix"], what="q_map matrix")
        if qmat.ndim != 2 or qmat.shape[1] != system.n + H.out_dim:
            raise ScenarioError(
                f"q_map matrix must have {system.n + H.out_dim} columns (state then features)"
            )
        qfm = FeatureMap.affine(qmat, qraw.get("offset"))
        qmap = QMap(qfm, system.n, float(qraw["lipschitz_x"]), float(qraw["lipschitz_h"]))
        q_names = tuple(qraw.get("names", [f"q{i}" for i in range(qfm.out_dim)]))
        mq = _metric(metrics, "q", qfm.out_dim)

        pmap = PredicateMap.from_json({"dimension": qfm.out_dim, "predicates": raw["predicates"]})
        spec_text = raw["spec"]

        inf = raw.get("inference", {})
        epsilon = float(to_time(inf.get("epsilon", "0")))
        max_depth = int(inf.get("max_depth", 4))
        max_window = to_time(inf.get("max_window", fmt_time(period * max(history, 1))))
        grid_features = tuple(inf.get("features", range(H.out_dim)))
        tradeoff = inf.get("tradeoff", "equal")
        ratio = float(inf.get("ratio", 1))
    except KeyError as exc:
        raise ScenarioError(f"missing scenario field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None

    # cross-validation
    try:
        H.validate(my, mh)
        qmap.validate(mx, mh, mq)
        pmap.validate(mq)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    phi = parse_formula(spec_text, pmap)
    sequential = parse_sequential(phi)
    need = required_horizon(phi)
    if math.isinf(need) or horizon * period < need:
        raise ScenarioError(
            f"horizon {horizon} steps of {fmt_time(period)} is shorter than the formula "
            f"horizon {fmt_time(need)}"
        )
    if epsilon < 0:
        raise ScenarioError("epsilon must be nonnegative")
    if isinstance(max_window, float) or max_window <= 0:
        raise ScenarioError("inference max_window must be a positive decimal")
    if history * period < max_window:
        raise ScenarioError(
            f"history of {history} steps covers {fmt_time(history * period)}, shorter than "
            f"the largest inference window {fmt_time(max_window)}"
        )
    if any(not 0 <= f < H.out_dim for f in grid_features):
        raise ScenarioError("inference feature index out of range")
    if tradeoff not in ("equal", "ratio"):
        raise ScenarioError("tradeoff must be 'equal' or 'ratio'")
    if ratio <= 0:
        raise ScenarioError("tradeoff ratio must be positive")

    return Scenario(
        name=raw.get("name", "scenario"), raw=raw, system=system, period=period,
        horizon=horizon, start_time=start_time, state_names=state_names, env_names=env_names,
        history=history, H=H,
        feature_names=feature_names, qmap=qmap, q_names=q_names, state_metric=mx,
        env_metric=my, feature_metric=mh, q_metric=mq, input_metric=mu, pmap=pmap,
        spec_text=spec_text, phi=phi, sequential=sequential, epsilon=epsilon,
        max_depth=max_depth, max_window=max_window, grid_features=grid_features,
        tradeoff=tradeoff, ratio=ratio,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(raw)


# ------------------------------------------------------------ demonstrations


def prepare_demonstrations(scenario: Scenario, demos, rtol: float = 1e-9) -> DemonstrationSet:
    """Validate demonstrations against the scenario and attach h and q traces.

    Every pair must satisfy the specification with strictly positive
    robustness, carry D history rows, and be consistent with the plant.
    """
    out, robustness = [], []
    K = scenario.horizon
    for demo in demos:
        where = f"demonstration {demo.name}"
        h_full = scenario.features(demo.env)
        try:
            h = scenario.env_window(h_full, K)
        except DemonstrationError as exc:
            raise DemonstrationError(f"{where}: {exc}") from None
        if demo.agent.dim != scenario.system.n:
            raise DemonstrationError(f"{where}: agent state has dimension {demo.agent.dim}")
        if demo.agent.times[0] != scenario.start_time or len(demo.agent) < K + 1:
            raise DemonstrationError(
                f"{where}: agent trace must start at t={fmt_time(scenario.start_time)} "
                f"and cover {K + 1} samples"
            )
        agent = demo.agent.slice(0, K + 1)
        if list(agent.times) != scenario.timeline(K):
            raise DemonstrationError(f"{where}: agent timestamps are not on the plant grid")
        if h.times[scenario.history:] != agent.times:
            raise DemonstrationError(f"{where}: agent and environment timestamps differ")
        if len(demo.inputs) < K or demo.inputs.dim != scenario.system.m:
            raise DemonstrationError(f"{where}: need {K} recorded inputs of dimension "
                                     f"{scenario.system.m}")
        if demo.inputs.times[:K] != agent.times[:K]:
            raise DemonstrationError(f"{where}: input timestamps differ from the agent's")
        inputs = [tuple(float(v) for v in row) for row in demo.inputs.states[:K]]
        try:
            replay = simulate_open_loop(scenario.system, agent.states[0], inputs, K, agent.times)
        except InputError as exc:
            raise DemonstrationError(f"{where}: {exc}") from None
        if not np.allclose(replay.states, agent.states, rtol=rtol, atol=rtol):
            raise DemonstrationError(f"{where}: agent trace is inconsistent with the plant "
                                     "under the recorded inputs")
        q = scenario.q_trace(agent, h)
        rho = eval_robust(scenario.phi, q, 0, scenario.pmap, scenario.q_metric)
        if not rho > 0 or not eval_boolean(scenario.phi, q, 0, scenario.pmap):
            raise DemonstrationError(
                f"{where}: specification robustness {rho} is not strictly positive"
            )
        demo.agent = agent
        demo.features = h
        demo.q = q
        demo.inputs = TimedTrace(agent.times[:K], np.array(inputs), demo.inputs.names)
        out.append(demo)
        robustness.append(rho)
    if not out:
        raise DemonstrationError("no demonstrations")
    return DemonstrationSet(out, scenario.history, robustness)


def load_demonstrations(scenario: Scenario, root) -> DemonstrationSet:
    return prepare_demonstrations(scenario, read_demo_root(root))
