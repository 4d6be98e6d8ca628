import json
import subprocess
import sys

import numpy as np
import pytest

from mtlloop.cli import main
from mtlloop.fixtures import SPEC, lead_env, lead_follow_config, shifted_speed_env
from mtlloop.plant import simulate_open_loop
from mtlloop.scenario import scenario_from_dict
from mtlloop.traces import (
    Demonstration,
    TimedTrace,
    format_trace,
    load_trace,
    read_demo_dir,
    save_trace,
    write_demo_dir,
)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def inferred(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("clf")
    code = main([str(a) for a in ["infer", "--scenario", fixture_dir / "scenario.json",
                                  "--demos", fixture_dir / "demos",
                                  "--out", out / "classifier.json",
                                  "--report", out / "report.json"]])
    assert code == 0
    return out / "classifier.json"


# ------------------------------------------------------------------ parse


def test_parse_spec_horizon(capsys):
    code, out, _ = run(capsys, "parse", "--formula", SPEC)
    assert code == 0
    assert "horizon: 40" in out
    assert out.splitlines()[0] == "And"


def test_parse_true(capsys):
    code, out, _ = run(capsys, "parse", "--formula", "true")
    assert code == 0 and "horizon: 0" in out


def test_parse_malformed_interval(capsys):
    code, _, err = run(capsys, "parse", "--formula", "F[3,1) a")
    assert code == 2
    assert "error" in err and "^" in err


def test_parse_past_formula_length(capsys):
    code, out, _ = run(capsys, "parse", "--formula", "H[0,2)(P[1,3) a)")
    assert code == 0 and "necessary_length: 5" in out


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "parse")[0] == 2
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys, "--help")[0] == 0


# ---------------------------------------------------------------- monitor


def test_monitor_fixture_trace(capsys, fixture_dir):
    q = fixture_dir / "demos" / "demo_0" / "q.csv"
    scen = fixture_dir / "scenario.json"
    code, out, err = run(capsys, "monitor", "--formula", SPEC, "--trace", q, "--scenario", scen,
                         "--robust")
    assert code == 0 and "satisfied: true" in out and "robustness: " in out
    assert float(out.split("robustness: ")[1]) > 0
    assert err == ""
    code, out, _ = run(capsys, "monitor", "--formula", f"!({SPEC})", "--trace", q,
                       "--scenario", scen)
    assert code == 1 and "satisfied: false" in out


def test_monitor_short_trace_warns(capsys, fixture_dir, tmp_path):
    q = load_trace(fixture_dir / "demos" / "demo_0" / "q.csv")
    save_trace(q.slice(0, 20), tmp_path / "short.csv")
    code, _, err = run(capsys, "monitor", "--formula", SPEC, "--trace", tmp_path / "short.csv",
                       "--scenario", fixture_dir / "scenario.json")
    assert code in (0, 1)
    assert "warning" in err and "finite-trace" in err


def test_monitor_pmap_file(capsys, tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({
        "dimension": 1, "predicates": {"a": {"halfspace": {"weights": [1.0], "offset": 2.0}}}}))
    save_trace(TimedTrace([0, 1, 2, 3], [[0.0], [3.0], [5.0], [1.0]], ["s"]), tmp_path / "t.csv")
    code, out, _ = run(capsys, "monitor", "--formula", "F[0,3) a", "--trace", tmp_path / "t.csv",
                       "--pmap", tmp_path / "p.json", "--robust")
    assert code == 0 and "robustness: 3.0" in out
    code, _, _ = run(capsys, "monitor", "--formula", "G[0,4) a", "--trace", tmp_path / "t.csv",
                     "--pmap", tmp_path / "p.json")
    assert code == 1
    code, _, err = run(capsys, "monitor", "--formula", "F[0,3) zz", "--trace", tmp_path / "t.csv",
                       "--pmap", tmp_path / "p.json")
    assert code == 2 and "zz" in err
    code, _, _ = run(capsys, "monitor", "--formula", "a", "--trace", tmp_path / "missing.csv",
                     "--pmap", tmp_path / "p.json")
    assert code == 2
    code, _, _ = run(capsys, "monitor", "--formula", "a", "--trace", tmp_path / "t.csv")
    assert code == 2


# ------------------------------------------------------------------ infer


def test_infer_fixture_report(inferred):
    report = json.loads((inferred.parent / "report.json").read_text())
    assert report["delta_c"] > 0 and report["delta_e"] > 0
    assert report["branches_per_location"] == {"l0": 3, "l1": 3, "l2": 1}
    assert report["exclusivity"] == "structural"


def _constant_demo(scenario):
    env = lead_env([1] * 41)
    inputs = np.array([[1.0, 0.0]] * 40)
    agent = simulate_open_loop(scenario.system, (0.0, 0.0), inputs, 40)
    return Demonstration("demo_0", TimedTrace(agent.times, agent.states, ["px", "py"]), env,
                         TimedTrace(range(40), inputs, ["ux", "uy"]))


def test_infer_single_constant_demo(capsys, tmp_path):
    config = lead_follow_config()
    (tmp_path / "scenario.json").write_text(json.dumps(config))
    write_demo_dir(tmp_path / "demos" / "demo_0", _constant_demo(scenario_from_dict(config)))
    code, out, _ = run(capsys, "infer", "--scenario", tmp_path / "scenario.json",
                       "--demos", tmp_path / "demos", "--out", tmp_path / "c.json")
    assert code == 0
    clf = json.loads((tmp_path / "c.json").read_text())
    assert [len(loc["branches"]) for loc in clf["locations"]] == [1, 1, 1]
    assert all(loc["branches"][0]["formula"] == "true" for loc in clf["locations"])
    assert all(loc["branches"][0]["input"] == [1.0, 0.0] for loc in clf["locations"])


def test_infer_conflict_exit(capsys, fixture_dir, tmp_path):
    config = lead_follow_config()
    scenario = scenario_from_dict(config)
    (tmp_path / "scenario.json").write_text(json.dumps(config))
    base = read_demo_dir(fixture_dir / "demos" / "demo_0")
    inputs = base.inputs.states.copy()
    k = next(k for k in range(1, 8) if inputs[k, 0] == 2.0)
    inputs[k, 0] = 1.0
    agent = simulate_open_loop(scenario.system, base.x0, inputs, 40, base.agent.times)
    twin = Demonstration("demo_1", TimedTrace(agent.times, agent.states, base.agent.names),
                         base.env, base.inputs.with_states(inputs))
    write_demo_dir(tmp_path / "demos" / "demo_0", base)
    write_demo_dir(tmp_path / "demos" / "demo_1", twin)
    code, _, err = run(capsys, "infer", "--scenario", tmp_path / "scenario.json",
                       "--demos", tmp_path / "demos", "--epsilon", "0", "--out",
                       tmp_path / "c.json")
    assert code == 2
    assert "inseparable leaf" in err
    (line,) = [x for x in err.splitlines() if "conflict:" in x]
    assert "demo_0" in line and "demo_1" in line
    assert not (tmp_path / "c.json").exists()


def test_infer_with_checks_and_tradeoff(capsys, fixture_dir, tmp_path):
    code, out, _ = run(capsys, "infer", "--scenario", fixture_dir / "scenario.json",
                       "--demos", fixture_dir / "demos", "--out", tmp_path / "c.json",
                       "--check", 20, "--tradeoff", "2")
    assert code == 0
    report = json.loads(out)
    assert report["delta_c"] == pytest.approx(2 * report["delta_e"])
    assert all(v["passed"] for v in report["conditions"]["conditions"].values())
    code, _, _ = run(capsys, "infer", "--scenario", fixture_dir / "scenario.json",
                     "--demos", fixture_dir / "demos", "--tradeoff", "wide")
    assert code == 2


def test_infer_bad_demo_dir(capsys, fixture_dir, tmp_path):
    code, _, err = run(capsys, "infer", "--scenario", fixture_dir / "scenario.json",
                       "--demos", tmp_path)
    assert code == 2 and "demo_" in err


# --------------------------------------------------------------- simulate


def test_simulate_replays_demo(capsys, fixture_dir, inferred, tmp_path):
    demo = fixture_dir / "demos" / "demo_0"
    code, out, err = run(capsys, "simulate", "--scenario", fixture_dir / "scenario.json",
                         "--classifier", inferred, "--env", demo / "env.csv", "--x0", "0,0",
                         "--out", tmp_path / "sim")
    assert code == 0 and out.startswith("satisfied") and err == ""
    assert load_trace(tmp_path / "sim" / "agent.csv") == load_trace(demo / "agent.csv")
    assert (tmp_path / "sim" / "agent.csv").read_text() == (demo / "agent.csv").read_text()
    assert load_trace(tmp_path / "sim" / "input.csv").states.tolist() == \
        load_trace(demo / "input.csv").states.tolist()
    run_json = json.loads((tmp_path / "sim" / "run.json").read_text())
    assert run_json["satisfied"] and run_json["accepted_by_automaton"]
    assert [e["entered"] for e in run_json["location_timeline"]] == ["l1", "l2"]
    # every emitted trace file re-loads losslessly
    for name in ("agent.csv", "input.csv", "q.csv", "plot.csv"):
        text = (tmp_path / "sim" / name).read_text()
        assert format_trace(load_trace(tmp_path / "sim" / name)) == text


def test_simulate_outside_region_warns(capsys, fixture_dir, inferred, tmp_path):
    code, _, err = run(capsys, "simulate", "--scenario", fixture_dir / "scenario.json",
                       "--classifier", inferred, "--env",
                       fixture_dir / "demos" / "demo_0" / "env.csv", "--x0=-3,0",
                       "--out", tmp_path)
    assert "outside certified region" in err
    assert code in (0, 1) and (tmp_path / "agent.csv").exists()


def test_simulate_adversarial_env(capsys, fixture_dir, inferred, tmp_path):
    env = load_trace(fixture_dir / "demos" / "demo_1" / "env.csv")
    save_trace(shifted_speed_env(env, 1.0), tmp_path / "env.csv")
    code, out, _ = run(capsys, "simulate", "--scenario", fixture_dir / "scenario.json",
                       "--classifier", inferred, "--env", tmp_path / "env.csv", "--x0", "0,0",
                       "--out", tmp_path / "sim")
    assert code == 1
    assert "violated" in out and "safety violation: obs" in out


def test_simulate_errors(capsys, fixture_dir, inferred, tmp_path):
    env = fixture_dir / "demos" / "demo_0" / "env.csv"
    scen = fixture_dir / "scenario.json"
    assert run(capsys, "simulate", "--scenario", scen, "--classifier", inferred, "--env", env,
               "--x0", "0")[0] == 2
    assert run(capsys, "simulate", "--scenario", scen, "--classifier", inferred, "--env", env,
               "--x0", "a,b")[0] == 2
    (tmp_path / "c.json").write_text("{}")
    assert run(capsys, "simulate", "--scenario", scen, "--classifier", tmp_path / "c.json",
               "--env", env, "--x0", "0,0")[0] == 2


# ----------------------------------------------------------------- verify


def _verify(capsys, fixture_dir, inferred, out, *extra):
    return run(capsys, "verify", "--scenario", fixture_dir / "scenario.json", "--classifier",
               inferred, "--out", out, *extra)


def test_verify_certified(capsys, fixture_dir, inferred, tmp_path):
    code, out, err = _verify(capsys, fixture_dir, inferred, tmp_path / "a", "--samples", 32,
                             "--seed", 1, "--restarts", 2, "--iters", 10)
    assert code == 0 and "verdict: verified-sampled" in out
    assert "wall time" in err
    _verify(capsys, fixture_dir, inferred, tmp_path / "b", "--samples", 32, "--seed", 1,
            "--restarts", 2, "--iters", 10)
    assert (tmp_path / "a" / "report.json").read_bytes() == \
        (tmp_path / "b" / "report.json").read_bytes()


def test_verify_falsified(capsys, fixture_dir, inferred, tmp_path):
    code, out, err = _verify(capsys, fixture_dir, inferred, tmp_path, "--samples", 16,
                             "--seed", 0, "--radius-scale", 3)
    assert code == 1 and "verdict: falsified" in out
    assert "exceeds the certified" in err
    q = load_trace(tmp_path / "counterexample_0" / "q.csv")
    assert len(q) == 41


def test_verify_zero_budget(capsys, fixture_dir, inferred, tmp_path):
    code, _, err = _verify(capsys, fixture_dir, inferred, tmp_path, "--samples", 0, "--seed", 0)
    assert code == 2 and "positive" in err


def test_verify_inconclusive(capsys, fixture_dir, inferred, tmp_path):
    data = json.loads(inferred.read_text())
    data["locations"] = [loc for loc in data["locations"] if loc["location"] != 2]
    (tmp_path / "partial.json").write_text(json.dumps(data))
    code, out, _ = _verify(capsys, fixture_dir, tmp_path / "partial.json", tmp_path / "v",
                           "--samples", 4, "--seed", 0, "--restarts", 0)
    assert code == 3 and "verdict: inconclusive" in out


# ---------------------------------------------------------------- fixture


def test_fixture_command(capsys, tmp_path):
    code, out, _ = run(capsys, "fixture", "--out", tmp_path, "--demos", 3, "--seed", 1)
    assert code == 0
    assert sorted(p.name for p in (tmp_path / "demos").iterdir()) == ["demo_0", "demo_1", "demo_2"]
    code, out, _ = run(capsys, "monitor", "--formula", SPEC, "--trace",
                       tmp_path / "demos" / "demo_2" / "q.csv", "--scenario",
                       tmp_path / "scenario.json")
    assert code == 0


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mtlloop.cli", "parse", "--formula", "F[0,1) a"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "horizon: 1" in proc.stdout
