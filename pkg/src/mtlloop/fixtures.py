"""Scripted lead-car following scenario used as test and demo data.

This is fixture code, not a controller design method: the demonstrations
come from a hand-written policy and rejection sampling.

The agent is a planar integrator x(k+1) = x(k) + u(k) with inputs
{(0,0), (1,0), (2,0)}.  A lead car drives ahead on the same lane with
speed ov(k) in {0, 1, 2}; the environment signal is y = (ox, oy, ov).
The scripted policy copies the lead's previous speed until the agent
reaches the goal region r2, then stops.  The resulting trace must visit
r1 within 10 time units, then r2 within 15 more, and never come within
one unit of the lead.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .automaton import LocationTracker
from .logic.semantics import eval_robust
from .scenario import scenario_from_dict
from .traces import Demonstration, TimedTrace, atomic_write, save_trace, write_demo_dir

SPEC = "F[0,10)(r1 & F[0,15) r2) & G[0,40) !obs"
HORIZON = 40
HISTORY = 3
START_GAP = 3.0
INPUTS = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]

INF = "inf"


def lead_follow_config(epsilon: str = "0", horizon: int = HORIZON) -> dict:
    return {
        "name": "lead-follow",
        "plant": {
            "A": [[1.0, 0.0], [0.0, 1.0]],
            "B": [[1.0, 0.0], [0.0, 1.0]],
            "inputs": INPUTS,
            "state_names": ["px", "py"],
            "period": "1",
            "horizon": horizon,
            "start_time": "0",
        },
        "environment": {"names": ["ox", "oy", "ov"], "history": HISTORY},
        "features": {"select": [0, 1, 2], "names": ["ox", "oy", "ov"], "lipschitz": 1.0},
        "q_map": {
            # q = (px, py, px - ox, py - oy)
            "matrix": [[1.0, 0.0, 0.0, 0.0, 0.0],
                       [0.0, 1.0, 0.0, 0.0, 0.0],
                       [1.0, 0.0, -1.0, 0.0, 0.0],
                       [0.0, 1.0, 0.0, -1.0, 0.0]],
            "names": ["px", "py", "rx", "ry"],
            "lipschitz_x": 2.0 ** 0.5,
            "lipschitz_h": 1.0,
        },
        "predicates": {
            "r1": {"box": {"lower": [4.5, -1.0, "-inf", "-inf"], "upper": [9.5, 1.0, INF, INF]}},
            "r2": {"box": {"lower": [14.5, -1.0, "-inf", "-inf"],
                           "upper": [24.5, 1.0, INF, INF]}},
            "obs": {"box": {"lower": ["-inf", "-inf", -1.0, -1.0],
                            "upper": [INF, INF, 1.0, 1.0]}},
        },
        "spec": SPEC,
        "inference": {"epsilon": epsilon, "max_depth": 4, "max_window": "3",
                      "tradeoff": "equal"},
    }


def lead_speeds(rng: np.random.Generator, steps: int, stay: float = 0.6) -> list[int]:
    """Sticky random speeds in {0, 1, 2}."""
    v = int(rng.integers(0, 3))
    out = []
    for _ in range(steps):
        if rng.random() >= stay:
            v = int(rng.choice(3, p=[0.2, 0.35, 0.45]))
        out.append(v)
    return out


def lead_env(speeds, history: int = HISTORY, start: float = START_GAP,
             history_speed: int = 0) -> TimedTrace:
    """Environment rows for t = -history .. len(speeds)-1."""
    rows = []
    ox = start - history_speed * history
    for _ in range(history):
        rows.append([ox, 0.0, float(history_speed)])
        ox += history_speed
    for v in speeds:
        rows.append([ox, 0.0, float(v)])
        ox += v
    times = list(range(-history, len(speeds)))
    return TimedTrace(times, np.array(rows), ["ox", "oy", "ov"])


def scripted_demo(scenario, env: TimedTrace, name: str, x0=(0.0, 0.0)) -> Demonstration:
    """Follow the lead's previous speed; stop once the goal region is reached."""
    K, D = scenario.horizon, scenario.history
    h = scenario.features(env)
    tracker = LocationTracker(scenario.sequential, scenario.pmap, scenario.q_metric)
    x = np.array(x0, dtype=float)
    states, inputs = [x], []
    for k in range(K + 1):
        rec = tracker.step(h.times[D + k], scenario.qmap(x, h.states[D + k]))
        if k == K:
            break
        if rec.state.location >= scenario.sequential.n:
            u = (0.0, 0.0)
        else:
            u = (float(env.states[D + k - 1, 2]), 0.0)
        x = scenario.system.step(x, u)
        states.append(x)
        inputs.append(u)
    times = list(range(K + 1))
    agent = TimedTrace(times, np.array(states), ["px", "py"])
    return Demonstration(name, agent, env, TimedTrace(times[:K], np.array(inputs), ["ux", "uy"]))


def generate_demos(scenario, n: int = 20, seed: int = 0, min_robustness: float = 0.5,
                   max_tries: int = 10000) -> list[Demonstration]:
    """Rejection-sample lead speed profiles until n demonstrations meet the margin."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        if len(out) == n:
            break
        env = lead_env(lead_speeds(rng, scenario.horizon + 1))
        demo = scripted_demo(scenario, env, f"demo_{len(out)}")
        q = scenario.q_trace(demo.agent, scenario.features(env))
        if eval_robust(scenario.phi, q, 0, scenario.pmap, scenario.q_metric) >= min_robustness:
            out.append(demo)
    if len(out) < n:
        raise RuntimeError(f"only {len(out)} of {n} demonstrations met the margin")
    return out


def shifted_speed_env(env: TimedTrace, offset: float) -> TimedTrace:
    """Lead speed feature raised by a constant: a known unsafe tube member at offset > 0.5."""
    states = env.states.copy()
    states[:, 2] += offset
    return env.with_states(states)


def write_fixture(root, n: int = 20, seed: int = 0, epsilon: str = "0") -> tuple[Path, Path]:
    """Write scenario.json and demos/demo_<i>/ under root; returns both paths.

    Each demo directory also gets q.csv, the monitored signal, for use with
    ``mtlloop monitor --scenario``.
    """
    root = Path(root)
    config = lead_follow_config(epsilon)
    scenario = scenario_from_dict(config)
    demos = generate_demos(scenario, n, seed)
    scen_path = root / "scenario.json"
    atomic_write(scen_path, json.dumps(config, indent=2) + "\n")
    demo_root = root / "demos"
    for demo in demos:
        write_demo_dir(demo_root / demo.name, demo)
        q = scenario.q_trace(demo.agent, scenario.features(demo.env))
        save_trace(TimedTrace(q.times, q.states, scenario.q_names), demo_root / demo.name / "q.csv")
    return scen_path, demo_root
