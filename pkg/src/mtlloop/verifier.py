"""Sampling-based verification of the closed loop, with per-sample certificates.

Initial states are drawn from metric balls around the demonstration starts and
environments from a tube around the demonstration feature traces.  Each
satisfied sample carries a radius within which any further environment change
(state fixed) provably keeps the same branch sequence and satisfaction.  A
coordinate-descent search complements the sampling by hunting for violations.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

from .inference import Classifier, ball_points
from .logic.lengths import required_horizon
from .logic.semantics import eval_boolean
from .plant import ClassifierError, SimulationResult, simulate_closed_loop
from .traces import TimedTrace, atomic_write, save_trace

# shrink factor that keeps boundary-projected perturbations strictly inside
INSIDE = 1.0 - 1e-9


class VerificationError(ValueError):
    pass


@dataclass
class VerificationProblem:
    centers: list[np.ndarray]
    ball_radius: float
    tubes: list[TimedTrace]
    tube_names: list[str]
    tube_radius: float
    horizon: int
    samples: int
    seed: int
    box: tuple[np.ndarray, np.ndarray] | None = None
    pairing: str = "cross"
    warnings: list[str] = field(default_factory=list)
    certified: bool = True

    @classmethod
    def from_classifier(cls, clf: Classifier, scenario, samples: int, seed: int,
                        radius_scale: float = 1.0, box=None, horizon: int | None = None):
        if clf.radii is None:
            raise VerificationError("classifier carries no certified radii")
        if not clf.nominal:
            raise VerificationError("classifier carries no nominal demonstrations")
        centers = []
        for n in clf.nominal:
            if not any(np.array_equal(n.x0, c) for c in centers):
                centers.append(n.x0)
        return cls(centers, radius_scale * clf.radii.delta_c,
                   [n.features for n in clf.nominal], [n.name for n in clf.nominal],
                   radius_scale * clf.radii.delta_e,
                   scenario.horizon if horizon is None else horizon, samples, seed,
                   None if box is None else (np.asarray(box[0], float), np.asarray(box[1], float)))

    def validate(self, clf: Classifier, scenario) -> None:
        if self.samples <= 0:
            raise VerificationError("sample budget N must be positive")
        if self.ball_radius < 0 or self.tube_radius < 0:
            raise VerificationError("radii must be nonnegative")
        if self.horizon * scenario.period < required_horizon(scenario.phi):
            raise VerificationError("horizon is shorter than the formula horizon")
        if clf.fingerprint and clf.fingerprint != scenario.fingerprint:
            raise VerificationError("classifier was inferred for a different scenario "
                                    "(fingerprint mismatch)")
        if self.pairing not in ("cross", "matched"):
            raise VerificationError("pairing must be 'cross' or 'matched'")
        tol = 1e-12
        self.warnings = []
        if self.ball_radius > clf.radii.delta_c * (1 + tol):
            self.warnings.append(f"initial-state radius {self.ball_radius!r} exceeds the "
                                 f"certified {clf.radii.delta_c!r}")
        if self.tube_radius > clf.radii.delta_e * (1 + tol):
            self.warnings.append(f"tube radius {self.tube_radius!r} exceeds the certified "
                                 f"{clf.radii.delta_e!r}")
        self.certified = not self.warnings

    def describe(self) -> dict:
        return {
            "balls": [c.tolist() for c in self.centers],
            "ball_radius": self.ball_radius,
            "box": None if self.box is None else [self.box[0].tolist(), self.box[1].tolist()],
            "tubes": self.tube_names,
            "tube_radius": self.tube_radius,
            "horizon": self.horizon,
            "samples": self.samples,
            "seed": self.seed,
            "pairing": self.pairing,
        }


@dataclass
class SampleCertificate:
    index: int
    ball: int
    tube: int
    x0: np.ndarray
    robustness: float
    satisfied: bool
    decision_margin: float
    transition_margin: float
    radius: float  # certified environment radius, 0 for counterexamples
    status: str  # "certificate", "counterexample" or "aborted"
    detail: str = ""

    def to_json(self) -> dict:
        return {
            "index": self.index, "ball": self.ball, "tube": self.tube,
            "x0": self.x0.tolist(), "robustness": _enc(self.robustness),
            "satisfied": self.satisfied, "decision_margin": _enc(self.decision_margin),
            "transition_margin": _enc(self.transition_margin), "r_cert": _enc(self.radius),
            "status": self.status, **({"detail": self.detail} if self.detail else {}),
        }


@dataclass
class Counterexample:
    source: str  # "sampling" or "falsification"
    index: int
    x0: np.ndarray
    features: TimedTrace
    result: SimulationResult
    confirmed: bool  # independent logic-core re-check says violated


@dataclass
class FalsificationResult:
    found: bool
    best_robustness: float
    evaluations: int
    restart: int | None = None
    counterexample: Counterexample | None = None

    def to_json(self) -> dict:
        return {"found": self.found, "best_robustness": _enc(self.best_robustness),
                "evaluations": self.evaluations, "restart": self.restart}


@dataclass
class VerificationReport:
    verdict: str
    problem: VerificationProblem
    certificates: list[SampleCertificate]
    counterexamples: list[Counterexample]
    falsification: FalsificationResult | None = None
    wall_time: float = 0.0  # kept out of the JSON so reruns are byte-identical

    @property
    def min_robustness(self) -> float:
        vals = [c.robustness for c in self.certificates if c.status != "aborted"]
        return min(vals, default=math.nan)

    def coverage(self) -> dict:
        radii = np.array([c.radius for c in self.certificates if c.status == "certificate"])
        n = len(self.certificates)
        if not len(radii):
            return {"certified_samples": 0, "fraction": 0.0}
        return {
            "certified_samples": int(len(radii)),
            "fraction": len(radii) / n,
            "min_r_cert": _enc(float(radii.min())),
            "median_r_cert": _enc(float(np.median(radii))),
            "covers_tube_radius": float(np.mean(radii >= self.problem.tube_radius)),
        }

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "certified_radii": self.problem.certified,
            "warnings": list(self.problem.warnings),
            "problem": self.problem.describe(),
            "summary": {
                "samples": len(self.certificates),
                "counterexamples": len(self.counterexamples),
                "aborted": sum(c.status == "aborted" for c in self.certificates),
                "min_robustness": _enc(self.min_robustness),
                "coverage": self.coverage(),
            },
            "falsification": self.falsification.to_json() if self.falsification else None,
            "counterexamples": [{"source": c.source, "index": c.index,
                                 "robustness": _enc(c.result.robustness),
                                 "confirmed": c.confirmed, "files": _cx_files(i)}
                                for i, c in enumerate(self.counterexamples)],
            "samples": [c.to_json() for c in self.certificates],
        }


def _enc(x: float):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _cx_files(i: int) -> dict:
    return {"agent": f"counterexample_{i}/agent.csv",
            "features": f"counterexample_{i}/features.csv",
            "q": f"counterexample_{i}/q.csv"}


# ----------------------------------------------------------- sample set


def _unit_directions(u: np.ndarray) -> np.ndarray:
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    lens = np.linalg.norm(g, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    return g / lens


def sample_parameters(problem: VerificationProblem, scenario) -> list[dict]:
    """Low-discrepancy draws over ball x tube; per-step noise from (seed, index) streams."""
    n = scenario.system.n
    p = scenario.feature_dim
    N = problem.samples
    dim = n + 1 + p + 1 + 1 + 2
    sobol = qmc.Sobol(dim, scramble=True, seed=problem.seed)
    u = sobol.random_base2(max(0, math.ceil(math.log2(N))))[:N]
    mx = scenario.state_metric
    mh = scenario.feature_metric
    xdir = np.linalg.solve(mx.factor, _unit_directions(u[:, :n]).T).T
    xrad = problem.ball_radius * u[:, n] ** (1.0 / n)
    cdir = np.linalg.solve(mh.factor, _unit_directions(u[:, n + 1:n + 1 + p]).T).T
    cmag = u[:, n + 1 + p]
    beta = u[:, n + 2 + p]
    out = []
    for s in range(N):
        if problem.pairing == "cross":
            ball = min(int(u[s, -2] * len(problem.centers)), len(problem.centers) - 1)
            tube = min(int(u[s, -1] * len(problem.tubes)), len(problem.tubes) - 1)
        else:
            tube = s % len(problem.tubes)
            ball = min(tube, len(problem.centers) - 1)
        x0 = problem.centers[ball] + xrad[s] * xdir[s]
        h = problem.tubes[tube]
        rng = np.random.default_rng([problem.seed, s])
        noise = ball_points(rng, mh, 1.0, len(h))
        pert = problem.tube_radius * (beta[s] * cmag[s] * cdir[s] + (1 - beta[s]) * noise)
        out.append({"index": s, "ball": ball, "tube": tube, "x0": x0,
                    "features": h.with_states(h.states + pert)})
    return out


def _inside_box(problem: VerificationProblem, x0) -> bool:
    if problem.box is None:
        return True
    return bool(np.all(x0 >= problem.box[0]) and np.all(x0 <= problem.box[1]))


def certify(result: SimulationResult, lh: float) -> float:
    """Environment radius that provably preserves branches, locations and satisfaction."""
    if not result.satisfied or not result.robustness > 0:
        return 0.0
    scale = (lambda v: v / lh) if lh > 0 else (lambda v: math.inf)
    return max(0.0, min(result.min_margin, scale(result.run.min_spatial_margin),
                        scale(result.robustness)))


def confirm_violation(scenario, clf, x0, features, K) -> tuple[bool, SimulationResult]:
    """Re-simulate from scratch and re-evaluate with logic-core."""
    res = simulate_closed_loop(scenario, clf, x0, features, K)
    violated = not eval_boolean(scenario.phi, res.q, 0, scenario.pmap)
    return violated, res


def verify_sampling(problem: VerificationProblem, clf: Classifier, scenario,
                    falsify_budget: tuple[int, int] | None = (10, 50)) -> VerificationReport:
    start = time.perf_counter()
    problem.validate(clf, scenario)
    lh = scenario.qmap.lipschitz_h
    certs, cxs = [], []
    for prm in sample_parameters(problem, scenario):
        s, x0, ht = prm["index"], prm["x0"], prm["features"]
        if not _inside_box(problem, x0):
            certs.append(SampleCertificate(s, prm["ball"], prm["tube"], x0, math.nan, False,
                                           math.nan, math.nan, 0.0, "aborted",
                                           "outside bounding box"))
            continue
        try:
            res = simulate_closed_loop(scenario, clf, x0, ht, problem.horizon)
        except ClassifierError as exc:
            certs.append(SampleCertificate(s, prm["ball"], prm["tube"], x0, math.nan, False,
                                           math.nan, math.nan, 0.0, "aborted", str(exc)))
            continue
        violated = not res.satisfied or res.robustness < 0
        status = "counterexample" if violated else "certificate"
        certs.append(SampleCertificate(s, prm["ball"], prm["tube"], x0, res.robustness,
                                       res.satisfied, res.min_margin,
                                       res.run.min_spatial_margin,
                                       0.0 if violated else certify(res, lh), status))
        if violated:
            ok, res2 = confirm_violation(scenario, clf, x0, ht, problem.horizon)
            cxs.append(Counterexample("sampling", s, x0, ht, res2, ok))
    fals = None
    if falsify_budget is not None:
        fals = falsify(problem, clf, scenario, *falsify_budget)
        if fals.counterexample is not None:
            cxs.append(fals.counterexample)
    if cxs:
        verdict = "falsified"
    elif any(c.status == "aborted" for c in certs):
        verdict = "inconclusive"
    else:
        verdict = "verified-sampled"
    return VerificationReport(verdict, problem, certs, cxs, fals, time.perf_counter() - start)


# ------------------------------------------------------------ falsification


def _project(v: np.ndarray, metric, radius: float) -> np.ndarray:
    r = metric.norm(v)
    limit = radius * INSIDE
    if r <= limit:
        return v
    return v * (limit / r)


def falsify(problem: VerificationProblem, clf: Classifier, scenario, restarts: int = 10,
            iters: int = 50) -> FalsificationResult:
    """Coordinate descent on (x0 offset, constant env offset, per-step env offsets).

    Each restart fixes one (ball, tube) pair, most fragile tube first.  Restart
    0 starts at the unperturbed point; later restarts start at a random point
    drawn from the (seed, restart) stream.  Returns at the first violation.
    """
    problem.validate(clf, scenario)
    mx, mh = scenario.state_metric, scenario.feature_metric
    n, p = scenario.system.n, scenario.feature_dim
    rc, re_ = problem.ball_radius, problem.tube_radius
    rob = [nr.robustness for nr in clf.nominal] if len(clf.nominal) == len(problem.tubes) \
        else [0.0] * len(problem.tubes)
    order = sorted(range(len(problem.tubes)), key=lambda j: (rob[j], j))
    best_overall, evals = math.inf, 0

    for restart in range(restarts):
        tube = order[restart % len(order)]
        ball = tube if problem.pairing == "matched" else restart % len(problem.centers)
        ball = min(ball, len(problem.centers) - 1)
        center, h = problem.centers[ball], problem.tubes[tube]
        T = len(h)
        rng = np.random.default_rng([problem.seed, 1_000_003, restart])
        dx, c, W = np.zeros(n), np.zeros(p), np.zeros((T, p))
        if restart > 0:
            dx = ball_points(rng, mx, rc, 1)[0] if rc > 0 else dx
            c = ball_points(rng, mh, re_, 1)[0] if re_ > 0 else c

        def realise(dx, c, W):
            x0 = center + _project(dx, mx, rc)
            pert = np.array([_project(c + w, mh, re_) for w in W])
            return x0, h.with_states(h.states + pert)

        def evaluate(dx, c, W):
            nonlocal evals
            evals += 1
            x0, ht = realise(dx, c, W)
            try:
                res = simulate_closed_loop(scenario, clf, x0, ht, problem.horizon)
            except ClassifierError:
                return math.inf, None, x0, ht
            value = res.robustness if res.satisfied else min(res.robustness, -0.0)
            return value, res, x0, ht

        def found(res, x0, ht):
            ok, res2 = confirm_violation(scenario, clf, x0, ht, problem.horizon)
            cx = Counterexample("falsification", restart, x0, ht, res2, ok)
            return FalsificationResult(True, res2.robustness, evals, restart, cx)

        value, res, x0, ht = evaluate(dx, c, W)
        if res is not None and (not res.satisfied or value < 0):
            return found(res, x0, ht)
        best_overall = min(best_overall, value)
        # coordinates: state offsets, constant env offsets, then per-step env offsets
        steps = {("x", i): rc for i in range(n)}
        steps.update({("c", i): re_ for i in range(p)})
        base = [k for k, v in steps.items() if v > 0]
        for it in range(iters):
            if it < len(base):
                key = base[it]
            elif re_ > 0 and rng.random() < 0.5:
                key = ("w", int(rng.integers(T)), int(rng.integers(p)))
                steps.setdefault(key, re_)
            elif base:
                key = base[it % len(base)]
            else:
                break
            improved = False
            for sign in (1.0, -1.0):
                cand = [dx.copy(), c.copy(), W.copy()]
                if key[0] == "x":
                    cand[0][key[1]] += sign * steps[key]
                elif key[0] == "c":
                    cand[1][key[1]] += sign * steps[key]
                else:
                    cand[2][key[1], key[2]] += sign * steps[key]
                v2, r2, x2, h2 = evaluate(*cand)
                if r2 is not None and (not r2.satisfied or v2 < 0):
                    return found(r2, x2, h2)
                if v2 < value:
                    value, (dx, c, W), improved = v2, cand, True
                    break
            if not improved:
                steps[key] /= 2
            best_overall = min(best_overall, value)
    return FalsificationResult(False, best_overall, evals)


# ---------------------------------------------------------------- output


def report_text(report: VerificationReport) -> str:
    return json.dumps(report.to_json(), indent=2) + "\n"


def write_report(report: VerificationReport, out_dir) -> Path:
    """report.json plus counterexample_<i>/{agent,features,q}.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, cx in enumerate(report.counterexamples):
        files = _cx_files(i)
        save_trace(cx.result.agent, out / files["agent"])
        save_trace(cx.features, out / files["features"])
        save_trace(cx.result.q, out / files["q"])
    path = out / "report.json"
    atomic_write(path, report_text(report))
    return path
