"""Acceptance criteria 1-9, each at its stated size and tolerance.

Every test records one PASS/FAIL line; the lines are printed as they happen
(visible with ``-s``) and repeated in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from mtlloop.automaton import track_location
from mtlloop.cli import main
from mtlloop.fixtures import lead_env, lead_speeds, scripted_demo
from mtlloop.inference import collect_location_samples, load_classifier, route
from mtlloop.logic import (
    AtomicPredicate,
    Metric,
    eval_boolean,
    eval_robust,
    eval_robust_oracle,
    signed_distance,
)
from mtlloop.plant import simulate_closed_loop, simulate_open_loop
from mtlloop.scenario import load_demonstrations, load_scenario
from mtlloop.traces import TimedTrace, load_trace

from .generators import inside_ball, random_formula, random_trace
from .oracles import projected_signed_distance, random_triple
from .test_semantics import M2, PLANE

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def cli(*argv) -> int:
    return main([str(a) for a in argv])


# ------------------------------------------------------------ shared runs


@pytest.fixture(scope="module")
def e2e(fixture_dir, tmp_path_factory):
    """cmd_infer on the fixture with the 500-sample condition check."""
    out = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    code = cli("infer", "--scenario", fixture_dir / "scenario.json",
               "--demos", fixture_dir / "demos", "--out", out / "classifier.json",
               "--report", out / "report.json", "--check", 500, "--seed", 0)
    elapsed = time.perf_counter() - t0
    return {"dir": out, "code": code, "elapsed": elapsed,
            "report": json.loads((out / "report.json").read_text()),
            "classifier": out / "classifier.json",
            "scenario": load_scenario(fixture_dir / "scenario.json"),
            "fixture": fixture_dir}


@pytest.fixture(scope="module")
def verified(e2e):
    out = e2e["dir"] / "verify_pos"
    t0 = time.perf_counter()
    code = cli("verify", "--scenario", e2e["fixture"] / "scenario.json",
               "--classifier", e2e["classifier"], "--samples", 200, "--seed", 0,
               "--radius-scale", 1.0, "--out", out)
    return {"code": code, "out": out, "elapsed": time.perf_counter() - t0}


# ---------------------------------------------------------------- criteria


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches, sign_errors, nonzero = 0, 0, 0
    for _ in range(1000):
        phi = random_formula(rng, 4)
        trace = random_trace(rng, 2, 20)
        k = int(rng.integers(len(trace)))
        r = eval_robust(phi, trace, k, PLANE, M2)
        if r != eval_robust_oracle(phi, trace, k, PLANE, M2):
            mismatches += 1
        if r != 0:
            nonzero += 1
            if eval_boolean(phi, trace, k, PLANE) != (r > 0):
                sign_errors += 1
    elapsed = time.perf_counter() - t0
    record(1, mismatches == 0 and sign_errors == 0 and elapsed < 60,
           f"1000 instances, {mismatches} robustness mismatches, {sign_errors} sign errors "
           f"over {nonzero} nonzero cases, {elapsed:.1f}s (< 60s)")


def _soundness_suite(rng, want_positive: bool, instances: int, perturbations: int):
    flips, drawn, done = 0, 0, 0
    while done < instances:
        drawn += 1
        phi = random_formula(rng, 4)
        trace = random_trace(rng, 2, 20)
        k = int(rng.integers(len(trace)))
        r = eval_robust(phi, trace, k, PLANE, M2)
        if not math.isfinite(r) or r == 0 or (r > 0) != want_positive:
            continue
        done += 1
        for _ in range(perturbations):
            pert = inside_ball(rng, M2.factor, abs(r), len(trace))
            other = trace.with_states(trace.states + pert)
            if eval_boolean(phi, other, k, PLANE) != want_positive:
                flips += 1
    return flips, drawn


def test_criterion_2_robustness_soundness():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    pos_flips, _ = _soundness_suite(rng, True, 200, 500)
    neg_flips, _ = _soundness_suite(rng, False, 200, 500)
    elapsed = time.perf_counter() - t0
    record(2, pos_flips == 0 and neg_flips == 0 and elapsed < 300,
           f"200 positive x 500 perturbations: {pos_flips} violations; 200 negative x 500: "
           f"{neg_flips} satisfactions; {elapsed:.1f}s (< 300s)")


def test_criterion_3_signed_distance_vs_projection():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(1000):
        point, shape, m = random_triple(rng)
        got = signed_distance(point, AtomicPredicate("p", shape), Metric(m))
        worst = max(worst, abs(got - projected_signed_distance(point, shape, m)))
    record(3, worst <= 1e-6, f"1000 triples, max |closed form - projection| = {worst:.2e} "
                             "(<= 1e-6)")


def test_criterion_4_automaton_consistency(scenario):
    rng = np.random.default_rng(11)
    K = scenario.horizon
    disagree, accepted = 0, 0
    for i in range(500):
        speeds = lead_speeds(rng, K + 1, stay=float(rng.uniform(0.3, 0.9)))
        env = lead_env(speeds, start=float(rng.uniform(1.0, 6.0)))
        if i % 2 == 0:
            demo = scripted_demo(scenario, env, "s", x0=tuple(rng.uniform(-1.5, 1.5, 2)))
            agent = demo.agent
        else:
            u = [scenario.system.inputs[j] for j in rng.integers(0, 3, size=K)]
            agent = simulate_open_loop(scenario.system, rng.uniform(-1.5, 1.5, 2), u, K)
        h = scenario.features(env)
        q = scenario.q_trace(agent, h)
        run = track_location(scenario.sequential, q, scenario.pmap, scenario.q_metric)
        sat = eval_boolean(scenario.phi, q, 0, scenario.pmap)
        accepted += sat
        disagree += run.accepted != sat
    record(4, disagree == 0, f"500 fixture traces ({accepted} satisfying), "
                             f"{disagree} disagreements between automaton and semantics")


def test_criterion_5_end_to_end(e2e):
    rep = e2e["report"]
    scenario = e2e["scenario"]
    demos = load_demonstrations(scenario, e2e["fixture"] / "demos")
    clf = load_classifier(e2e["classifier"])
    # exact eps-soundness: every training sample routes to an input within eps of its label
    located = collect_location_samples(demos, scenario)
    worst = 0.0
    for loc, samples in located.samples.items():
        for s in samples:
            leaf, _ = route(clf.trees[loc], demos.demos[s.demo].features, s.env_index,
                            clf.pmap, clf.metric)
            worst = max(worst, scenario.input_metric.dist(scenario.system.inputs[s.label],
                                                          clf.inputs[leaf.label]))
    conds = rep["conditions"]["conditions"]
    ok = (e2e["code"] == 0 and len(demos) >= 20 and rep["delta_c"] > 0 and rep["delta_e"] > 0
          and worst <= clf.epsilon and all(c["passed"] for c in conds.values())
          and rep["conditions"]["perturbations"] == 500 and rep["conditions"]["scale"] == 0.99
          and e2e["elapsed"] < 300)
    record(5, ok, f"{len(demos)} demos, delta_c={rep['delta_c']:.4f}, "
                  f"delta_e={rep['delta_e']:.4f}, max eps error {worst} <= {clf.epsilon}, "
                  f"conditions {[k for k, c in conds.items() if c['passed']]} pass with 500 "
                  f"samples at 0.99, {e2e['elapsed']:.1f}s (< 300s)")


def test_criterion_6_bitwise_replay(e2e):
    scenario = e2e["scenario"]
    demos = load_demonstrations(scenario, e2e["fixture"] / "demos")
    clf = load_classifier(e2e["classifier"])
    exact = 0
    for demo in demos:
        res = simulate_closed_loop(scenario, clf, demo.x0, demo.features, scenario.horizon)
        exact += bool(np.array_equal(res.agent.states, demo.agent.states)
                      and res.agent.times == demo.agent.times)
    record(6, exact == len(demos), f"{exact}/{len(demos)} demonstrations replayed bitwise")


def test_criterion_7_verification(e2e, verified, tmp_path):
    pos = json.loads((verified["out"] / "report.json").read_text())
    t0 = time.perf_counter()
    neg_code = cli("verify", "--scenario", e2e["fixture"] / "scenario.json",
                   "--classifier", e2e["classifier"], "--samples", 200, "--seed", 0,
                   "--radius-scale", 3.0, "--out", tmp_path)
    neg_elapsed = time.perf_counter() - t0
    neg = json.loads((tmp_path / "report.json").read_text())
    # independent re-simulation of the first counterexample from its written files
    scenario = e2e["scenario"]
    clf = load_classifier(e2e["classifier"])
    resim_violates = False
    if neg["counterexamples"]:
        files = neg["counterexamples"][0]["files"]
        agent = load_trace(tmp_path / files["agent"])
        feats = load_trace(tmp_path / files["features"])
        res = simulate_closed_loop(scenario, clf, agent.states[0], feats, scenario.horizon)
        resim_violates = (not eval_boolean(scenario.phi, res.q, 0, scenario.pmap)
                          and np.array_equal(res.agent.states, agent.states))
    min_rob = pos["summary"]["min_robustness"]
    total = verified["elapsed"] + neg_elapsed
    ok = (verified["code"] == 0 and pos["verdict"] == "verified-sampled" and min_rob > 0
          and neg_code == 1 and neg["verdict"] == "falsified" and resim_violates
          and total < 300)
    record(7, ok, f"scale 1.0 N=200: {pos['verdict']} min robustness {min_rob:.4f}; scale 3.0: "
                  f"{neg['verdict']} with {len(neg['counterexamples'])} counterexample(s), "
                  f"re-simulated violation {resim_violates}; {total:.1f}s (< 300s)")


def test_criterion_8_structural_exclusivity(e2e):
    scenario = e2e["scenario"]
    clf = load_classifier(e2e["classifier"])
    rng = np.random.default_rng(5)
    D = scenario.history
    bad = 0
    counts = {}
    thresholds = sorted({abs(p.shape.offset) for p in clf.pmap.entries.values()})
    for loc, branches in clf.locations.items():
        for _ in range(1000):
            n = D + 1 + int(rng.integers(0, 4))
            states = rng.uniform(-2, 4, size=(n, clf.metric.dim))
            # put some samples exactly on the split thresholds
            hit = rng.random(states.shape) < 0.2
            states[hit] = rng.choice(thresholds, size=int(hit.sum()))
            h = TimedTrace(range(-D, n - D), states, clf.feature_names)
            k = int(rng.integers(D, n))
            fires = sum(eval_boolean(b.formula, h, k, clf.pmap) for b in branches)
            bad += fires != 1
        counts[f"l{loc}"] = len(branches)
    record(8, bad == 0, f"1000 random histories for each of {counts}: {bad} cases without "
                        "exactly one true branch")


def test_criterion_9_determinism(e2e, verified, tmp_path):
    fx = e2e["fixture"]
    cli("infer", "--scenario", fx / "scenario.json", "--demos", fx / "demos",
        "--out", tmp_path / "classifier.json", "--report", tmp_path / "report.json",
        "--check", 500, "--seed", 0)
    cli("verify", "--scenario", fx / "scenario.json", "--classifier", e2e["classifier"],
        "--samples", 200, "--seed", 0, "--radius-scale", 1.0, "--out", tmp_path / "verify_pos")
    same_clf = (tmp_path / "classifier.json").read_bytes() == e2e["classifier"].read_bytes()
    same_rep = (tmp_path / "report.json").read_bytes() == \
        (e2e["dir"] / "report.json").read_bytes()
    same_ver = (tmp_path / "verify_pos" / "report.json").read_bytes() == \
        (verified["out"] / "report.json").read_bytes()
    record(9, same_clf and same_rep and same_ver,
           f"rerun infer classifier identical={same_clf}, infer report identical={same_rep}, "
           f"verify report identical={same_ver}")
