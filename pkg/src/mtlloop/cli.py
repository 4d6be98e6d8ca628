"""Command-line front end.

Exit codes: 0 success / satisfied / verified-sampled, 1 violated / falsified,
2 usage or input error, 3 verification inconclusive.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .inference import (
    ClassifierFormatError,
    InferenceError,
    check_conditions,
    dumps_classifier,
    infer_classifier,
    load_classifier,
)
from .logic.lengths import TemporalDirectionError, necessary_length, required_horizon
from .logic.parser import FormulaSyntaxError, UnknownAtomError, parse_formula
from .logic.predicates import Metric, PredicateMap
from .logic.semantics import eval_boolean, eval_robust
from .logic.syntax import Formula, Top, fmt_time, pretty
from .plant import ClassifierError, simulate_closed_loop
from .scenario import DemonstrationError, ScenarioError, load_demonstrations, load_scenario
from .traces import TimedTrace, TraceFormatError, atomic_write, load_trace, save_trace
from .verifier import VerificationError, VerificationProblem, verify_sampling, write_report

EXIT_OK, EXIT_VIOLATED, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def ast_dump(node: Formula, indent: int = 0) -> str:
    pad = "  " * indent
    name = type(node).__name__
    if isinstance(node, Top):
        return f"{pad}Top"
    if hasattr(node, "name"):
        return f"{pad}Atom {node.name}"
    head = f"{pad}{name}"
    if getattr(node, "interval", None) is not None:
        head += f" {node.interval}"
    kids = [getattr(node, k) for k in ("arg", "left", "right") if hasattr(node, k)]
    return "\n".join([head] + [ast_dump(k, indent + 1) for k in kids])


def _read_pmap(path) -> tuple[PredicateMap, Metric | None]:
    data = json.loads(Path(path).read_text())
    pmap = PredicateMap.from_json(data)
    metric = Metric(data["metric"]) if "metric" in data else None
    if metric is not None:
        pmap.validate(metric)
    return pmap, metric


def _lengths(phi: Formula) -> dict[str, str]:
    out = {}
    try:
        out["horizon"] = fmt_time(required_horizon(phi))
    except TemporalDirectionError:
        pass
    try:
        out["necessary_length"] = fmt_time(necessary_length(phi))
    except TemporalDirectionError:
        pass
    return out


# ---------------------------------------------------------------- commands


def cmd_parse(args) -> int:
    pmap = _read_pmap(args.pmap)[0] if args.pmap else None
    phi = parse_formula(args.formula, pmap)
    print(ast_dump(phi))
    print(f"formula: {pretty(phi)}")
    lengths = _lengths(phi)
    for key in ("horizon", "necessary_length"):
        if key in lengths:
            print(f"{key}: {lengths[key]}")
    if not lengths:
        print("horizon: n/a (formula mixes past and future operators)")
    return EXIT_OK


def cmd_monitor(args) -> int:
    if args.scenario:
        scen = load_scenario(args.scenario)
        pmap, metric = scen.pmap, scen.q_metric
    elif args.pmap:
        pmap, metric = _read_pmap(args.pmap)
    else:
        raise UsageError("monitor needs --pmap or --scenario for the atomic predicates")
    phi = parse_formula(args.formula, pmap)
    trace = load_trace(args.trace)
    if trace.dim != pmap.dim:
        raise UsageError(f"trace has dimension {trace.dim}, predicates expect {pmap.dim}")
    metric = metric or Metric.identity(pmap.dim)
    k = args.at
    if not 0 <= k < len(trace):
        raise UsageError(f"--at {k} is outside the trace (length {len(trace)})")
    lengths = _lengths(phi)
    if "horizon" in lengths and trace.times[-1] - trace.times[k] < required_horizon(phi):
        _warn(f"trace covers {fmt_time(trace.times[-1] - trace.times[k])} time units after "
              f"index {k}; formula horizon is {lengths['horizon']}; finite-trace "
              "convention applied")
    sat = eval_boolean(phi, trace, k, pmap)
    print(f"satisfied: {'true' if sat else 'false'}")
    if args.robust:
        print(f"robustness: {eval_robust(phi, trace, k, pmap, metric)!r}")
    return EXIT_OK if sat else EXIT_VIOLATED


def inference_report(clf, scenario, demos, conditions=None) -> dict:
    r = clf.radii
    return {
        "scenario": scenario.name,
        "scenario_fingerprint": scenario.fingerprint,
        "spec": scenario.spec_text,
        "demonstrations": len(demos),
        "rho_min": demos.rho_min,
        "epsilon": clf.epsilon,
        "delta_c": r.delta_c,
        "delta_e": r.delta_e,
        "binding_constraint": r.binding,
        "pareto_endpoints": {"delta_c_only": _enc(r.endpoint_c), "delta_e_only": _enc(r.endpoint_e)},
        "coverage_margin": _enc(clf.margin),
        "transition_margin": _enc(r.transition_margin),
        "alpha": r.alpha,
        "branches_per_location": {f"l{k}": v for k, v in clf.branch_counts().items()},
        "samples_per_location": {f"l{k}": v for k, v in clf.sample_counts.items()},
        "uncovered_locations": [f"l{k}" for k in clf.uncovered],
        "exclusivity": clf.exclusivity,
        "conditions": conditions.to_json() if conditions else None,
    }


def _enc(x):
    return x if not isinstance(x, float) or math.isfinite(x) else ("inf" if x > 0 else "-inf")


def cmd_infer(args) -> int:
    scenario = load_scenario(args.scenario)
    demos = load_demonstrations(scenario, args.demos)
    ratio = None
    tradeoff = args.tradeoff
    if tradeoff is not None and tradeoff not in ("equal", "ratio"):
        try:
            ratio = float(tradeoff)
        except ValueError:
            raise UsageError("--tradeoff must be 'equal', 'ratio' or a positive number") from None
        tradeoff = "ratio"
    if args.ratio is not None:
        ratio = args.ratio
    try:
        clf = infer_classifier(scenario, demos, args.epsilon, tradeoff, ratio)
    except InferenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.details:
            print(f"  conflict: {line}", file=sys.stderr)
        return EXIT_ERROR
    conditions = None
    if args.check:
        conditions = check_conditions(clf, demos, scenario, args.check, args.seed)
    out = Path(args.out)
    atomic_write(out, dumps_classifier(clf))
    report = inference_report(clf, scenario, demos, conditions)
    text = json.dumps(report, indent=2) + "\n"
    if args.report:
        atomic_write(Path(args.report), text)
    sys.stdout.write(text)
    if conditions is not None and not conditions.ok:
        return EXIT_VIOLATED
    return EXIT_OK


def _parse_x0(text: str, n: int) -> np.ndarray:
    try:
        x0 = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"--x0 must be a comma-separated list of numbers, got {text!r}") from None
    if x0.shape != (n,):
        raise UsageError(f"--x0 needs {n} values")
    return x0


def _check_fingerprint(clf, scenario) -> None:
    if clf.fingerprint and clf.fingerprint != scenario.fingerprint:
        raise UsageError("classifier was inferred for a different scenario (fingerprint mismatch)")


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    clf = load_classifier(args.classifier)
    _check_fingerprint(clf, scenario)
    env = load_trace(args.env)
    h = scenario.env_window(scenario.features(env))
    x0 = _parse_x0(args.x0, scenario.system.n)
    if clf.radii is not None and clf.nominal:
        near = min(scenario.state_metric.dist(x0, n.x0) for n in clf.nominal)
        if near > clf.radii.delta_c:
            _warn("initial state is outside certified region "
                  f"(distance {near!r} > delta_c {clf.radii.delta_c!r})")
    res = simulate_closed_loop(scenario, clf, x0, h, scenario.horizon)
    report = {
        "satisfied": res.satisfied,
        "robustness": res.robustness,
        "min_decision_margin": _enc(res.min_margin),
        "min_transition_margin": _enc(res.run.min_spatial_margin),
        "accepted_by_automaton": res.run.accepted,
        "deadline_violation_step": res.run.deadline_violation,
        "safety_violations": [{"step": k, "predicate": p} for k, p in res.run.safety_violations],
        "location_timeline": [{"step": k, "time": fmt_time(res.agent.times[k]),
                               "entered": f"l{j}"} for k, j in res.run.transitions()],
        "steps": [{"step": k, "location": f"l{res.run.steps[k].state.location}",
                   "branch": res.branches[k], "input": list(res.inputs[k]),
                   "margin": _enc(res.margins[k])} for k in range(len(res.inputs))],
    }
    out = Path(args.out)
    save_trace(res.agent, out / "agent.csv")
    if res.inputs:
        save_trace(TimedTrace(res.agent.times[:-1], np.array(res.inputs)), out / "input.csv")
    save_trace(TimedTrace(res.q.times, res.q.states, scenario.q_names), out / "q.csv")
    margins = list(res.margins) + [math.nan]
    plot = TimedTrace(res.q.times, np.column_stack([res.robustness_signal, margins,
                                                     res.run.locations]),
                      ["robustness", "decision_margin", "location"])
    save_trace(plot, out / "plot.csv")
    atomic_write(out / "run.json", json.dumps(report, indent=2) + "\n")
    verdict = "satisfied" if res.satisfied else "violated"
    print(f"{verdict}: robustness {res.robustness!r}")
    if not res.satisfied:
        for k, p in res.run.safety_violations[:5]:
            print(f"  safety violation: {p} at step {k}")
        if res.run.deadline_violation is not None:
            print(f"  deadline missed at step {res.run.deadline_violation}")
    return EXIT_OK if res.satisfied else EXIT_VIOLATED


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    clf = load_classifier(args.classifier)
    problem = VerificationProblem.from_classifier(clf, scenario, args.samples, args.seed,
                                                  args.radius_scale)
    problem.pairing = args.pairing
    budget = None if args.restarts == 0 else (args.restarts, args.iters)
    report = verify_sampling(problem, clf, scenario, budget)
    for w in problem.warnings:
        _warn(w)
    write_report(report, args.out)
    print(f"verdict: {report.verdict}")
    print(f"samples: {len(report.certificates)}  counterexamples: {len(report.counterexamples)}"
          f"  min robustness: {report.min_robustness!r}")
    print(f"wall time: {report.wall_time:.2f}s", file=sys.stderr)
    return {"verified-sampled": EXIT_OK, "falsified": EXIT_VIOLATED}.get(report.verdict,
                                                                         EXIT_INCONCLUSIVE)


def cmd_fixture(args) -> int:
    from .fixtures import write_fixture

    scen, demos = write_fixture(args.out, args.demos, args.seed, args.epsilon)
    print(f"scenario: {scen}")
    print(f"demos: {demos}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtlloop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", help="parse a formula and print its syntax tree")
    s.add_argument("--formula", required=True)
    s.add_argument("--pmap", help="predicate map JSON used to resolve atoms")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("monitor", help="evaluate a formula on a trace")
    s.add_argument("--formula", required=True)
    s.add_argument("--trace", required=True)
    s.add_argument("--pmap", help="predicate map JSON (optional 'metric' entry)")
    s.add_argument("--scenario", help="take predicates and metric from a scenario file")
    s.add_argument("--robust", action="store_true", help="print the robustness value")
    s.add_argument("--at", type=int, default=0, help="trace index to evaluate at")
    s.set_defaults(func=cmd_monitor)

    s = sub.add_parser("infer", help="learn a classifier from demonstrations")
    s.add_argument("--scenario", required=True)
    s.add_argument("--demos", required=True)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--tradeoff", help="'equal' (default) or a ratio delta_c:delta_e as a number")
    s.add_argument("--ratio", type=float, help="delta_c / delta_e when --tradeoff ratio")
    s.add_argument("--out", default="classifier.json")
    s.add_argument("--report", help="also write the inference report here")
    s.add_argument("--check", type=int, default=0, metavar="N",
                   help="run the condition checks with N perturbations")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("simulate", help="run the classifier in the loop on one environment")
    s.add_argument("--scenario", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--env", required=True, help="environment trace CSV with history rows")
    s.add_argument("--x0", required=True, help="initial state as a comma-separated list")
    s.add_argument("--out", default="simulation")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="sampling-based verification plus falsification")
    s.add_argument("--scenario", required=True)
    s.add_argument("--classifier", required=True)
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--radius-scale", type=float, default=1.0)
    s.add_argument("--pairing", choices=["cross", "matched"], default="cross")
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--out", default="verification")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("fixture", help="write the scripted lead-following test scenario")
    s.add_argument("--out", required=True)
    s.add_argument("--demos", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epsilon", default="0")
    s.set_defaults(func=cmd_fixture)
    return p


ERRORS = (FormulaSyntaxError, UnknownAtomError, TemporalDirectionError, ScenarioError,
          DemonstrationError, TraceFormatError, ClassifierFormatError, ClassifierError,
          VerificationError, InferenceError, UsageError, OSError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ERRORS as exc:
        msg = str(exc)
        if isinstance(exc, FormulaSyntaxError):
            msg = f"{msg}\n  {args.formula}\n  {' ' * exc.position}^"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
