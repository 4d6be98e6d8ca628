"""Per-location decision classifiers learned from demonstrations, with certified radii.

For each automaton location the samples (feature history at step k, recorded
input u(k)) are split by a binary decision tree whose nodes are past-time
primitives ``Once[a,b)(h_f >= th)``, ``Once[a,b)(h_f <= th)``,
``Historically[a,b)(h_f >= th)`` or ``Historically[a,b)(h_f <= th)``.  Leaves
become branch formulas (conjunctions along the path), so the branches of one
location partition every possible feature history.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .automaton import Run, track_location
from .logic.parser import parse_formula
from .logic.predicates import AtomicPredicate, Halfspace, Metric, PredicateMap
from .logic.semantics import eval_boolean, past_window, robust_signal
from .logic.syntax import (
    And,
    Atom,
    Formula,
    Historically,
    Interval,
    Not,
    Once,
    Or,
    Top,
    fmt_time,
    pretty,
    to_time,
)
from .plant import decision_table, simulate_open_loop, state_propagation_bound
from .traces import DemonstrationSet, TimedTrace, atomic_write

FORMAT = "mtlloop-classifier/1"

# total order on node operators used by the lexicographic tie-break
OPERATORS = (("P", ">="), ("P", "<="), ("H", ">="), ("H", "<="))


class InferenceError(ValueError):
    def __init__(self, kind: str, message: str, details: Sequence[str] = ()):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.details = list(details)


class ClassifierFormatError(ValueError):
    pass


# ------------------------------------------------------------------ grid


@dataclass(frozen=True)
class PrimitiveGrid:
    """Candidate node primitives: features x windows x operators x thresholds.

    Thresholds are not stored; they are the midpoints of the statistic
    values seen at each node.
    """

    features: tuple[int, ...]
    windows: tuple[Interval, ...]
    period: Fraction
    max_depth: int = 4

    @classmethod
    def regular(cls, features: Sequence[int], period, max_window, max_depth: int = 4):
        period, max_window = to_time(period), to_time(max_window)
        steps = int(max_window / period)
        if steps < 1:
            raise ValueError("max window shorter than one period")
        windows = tuple(Interval(a * period, b * period)
                        for a in range(steps) for b in range(a + 1, steps + 1))
        return cls(tuple(sorted(features)), windows, period, max_depth)

    @classmethod
    def from_scenario(cls, scenario) -> "PrimitiveGrid":
        return cls.regular(scenario.grid_features, scenario.period, scenario.max_window,
                           scenario.max_depth)

    @property
    def max_window(self) -> Fraction:
        return max(w.hi for w in self.windows)

    def describe(self) -> dict:
        return {
            "features": list(self.features),
            "windows": [[fmt_time(w.lo), fmt_time(w.hi)] for w in self.windows],
            "operators": ["Once", "Historically"],
            "comparisons": [">=", "<="],
            "thresholds": "midpoints of sorted node values",
            "max_depth": self.max_depth,
        }


# ------------------------------------------------------------- samples


@dataclass(frozen=True)
class Sample:
    demo: int
    step: int  # k on the plant grid
    env_index: int  # index of step k in the demo's feature trace
    label: int  # index of u(k) in the input set


@dataclass
class LocationSamples:
    samples: dict[int, list[Sample]]
    uncovered: list[int]
    runs: list[Run]


def collect_location_samples(demos: DemonstrationSet, scenario) -> LocationSamples:
    """Assign every demonstration step to the automaton location it occupies."""
    n = scenario.sequential.n
    samples: dict[int, list[Sample]] = {j: [] for j in range(n + 1)}
    runs = []
    for i, demo in enumerate(demos):
        run = track_location(scenario.sequential, demo.q, scenario.pmap, scenario.q_metric)
        if not run.accepted:
            raise InferenceError("corrupt demonstration",
                                 f"{demo.name} does not satisfy the specification")
        runs.append(run)
        for k in range(len(demo.inputs)):
            loc = run.steps[k].state.location
            label = scenario.system.input_index(demo.inputs.states[k])
            samples[loc].append(Sample(i, k, demos.history + k, label))
    uncovered = [j for j, s in samples.items() if not s]
    return LocationSamples({j: s for j, s in samples.items() if s}, uncovered, runs)


# ------------------------------------------------------------------ tree


@dataclass(frozen=True)
class Primitive:
    feature: int
    op: str  # "P" (Once) or "H" (Historically)
    cmp: str  # ">=" or "<="
    window: Interval
    threshold: float
    atom: str

    @property
    def formula(self) -> Formula:
        kind = Once if self.op == "P" else Historically
        return kind(Atom(self.atom), self.window)

    @property
    def uses_max(self) -> bool:
        # the statistic that decides the primitive: max for P>= and H<=
        return (self.op, self.cmp) in (("P", ">="), ("H", "<="))


@dataclass
class TreeNode:
    primitive: Primitive | None = None
    true_child: "TreeNode | None" = None
    false_child: "TreeNode | None" = None
    label: int | None = None  # leaf input index
    samples: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.primitive is None

    def leaves(self) -> list[tuple[list[Formula], "TreeNode"]]:
        """(path literals, leaf) in true-first depth-first order."""
        if self.is_leaf:
            return [([], self)]
        psi = self.primitive.formula
        out = [([psi] + path, leaf) for path, leaf in self.true_child.leaves()]
        out += [([Not(psi)] + path, leaf) for path, leaf in self.false_child.leaves()]
        return out


def conjoin(parts: Sequence[Formula]) -> Formula:
    if not parts:
        return Top()
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disjoin(parts: Sequence[Formula]) -> Formula:
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


@dataclass
class Branch:
    formula: Formula
    input: tuple[float, ...]
    margin: float
    samples: int = 0


def _atom_base(name: str) -> str:
    base = re.sub(r"\W", "_", name)
    return base if base and not base[0].isdigit() else f"h_{base}"


class _AtomTable:
    """Names and predicates for the threshold atoms h_f >= th / h_f <= th."""

    def __init__(self, feature_names: Sequence[str], metric: Metric):
        self.names = list(feature_names)
        self.metric = metric
        self.pmap = PredicateMap(len(feature_names))
        self.keys: dict[tuple[int, str, float], str] = {}
        self.info: dict[str, tuple[int, str, float]] = {}

    def get(self, feature: int, cmp: str, threshold: float) -> str:
        key = (feature, cmp, threshold)
        if key not in self.keys:
            tag = "ge" if cmp == ">=" else "le"
            name = f"{_atom_base(self.names[feature])}_{tag}_{len(self.keys)}"
            self.pmap.add(AtomicPredicate(name, threshold_shape(len(self.names), feature, cmp,
                                                                threshold)))
            self.keys[key] = name
            self.info[name] = key
        return self.keys[key]


def threshold_shape(dim: int, feature: int, cmp: str, threshold: float) -> Halfspace:
    sign = 1.0 if cmp == ">=" else -1.0
    weights = tuple(sign if i == feature else 0.0 for i in range(dim))
    return Halfspace(weights, sign * threshold)


class _Stats:
    """Windowed max/min of each grid feature at each sample of one location."""

    def __init__(self, samples: list[Sample], traces: list[TimedTrace], grid: PrimitiveGrid):
        self.values: dict[tuple[int, int, bool], np.ndarray] = {}
        for f in grid.features:
            for w, window in enumerate(grid.windows):
                hi = np.empty(len(samples))
                lo = np.empty(len(samples))
                for s, smp in enumerate(samples):
                    h = traces[smp.demo]
                    a, b = past_window(h.times, smp.env_index, window)
                    seg = h.states[a:b, f]
                    hi[s] = seg.max()
                    lo[s] = seg.min()
                self.values[(f, w, True)] = hi
                self.values[(f, w, False)] = lo


def _robustness(prim_op: tuple[str, str], values: np.ndarray, threshold: float, scale: float):
    # same operation order as the halfspace atoms evaluated by logic-core
    if prim_op[1] == ">=":
        return (values - threshold) / scale
    return (threshold - values) / scale


class _TreeBuilder:
    def __init__(self, samples, stats: _Stats, grid: PrimitiveGrid, inputs, input_metric: Metric,
                 eps: float, atoms: _AtomTable, describe):
        self.samples = samples
        self.labels = np.array([s.label for s in samples])
        self.stats = stats
        self.grid = grid
        self.inputs = [np.array(u) for u in inputs]
        self.metric = input_metric
        self.eps = eps
        self.atoms = atoms
        self.describe = describe
        self.scales = {f: atoms.metric.dual_norm(np.eye(atoms.metric.dim)[f])
                       for f in grid.features}
        M = len(inputs)
        self.dist = np.array([[input_metric.dist(self.inputs[a], self.inputs[b])
                               for b in range(M)] for a in range(M)])

    def cover(self, labels) -> int | None:
        """Minimising input within eps of every label (ties by input order), else None."""
        present = sorted(set(int(v) for v in labels))
        worst = self.dist[:, present].max(axis=1)
        best = int(np.argmin(worst))  # first minimiser
        return best if worst[best] <= self.eps else None

    def build(self, idx: np.ndarray, depth: int) -> TreeNode:
        labels = self.labels[idx]
        cover = self.cover(labels)
        if cover is not None:
            return TreeNode(label=cover, samples=len(idx))
        if depth >= self.grid.max_depth:
            raise InferenceError("inseparable leaf",
                                 f"no input within eps={self.eps} of every label after "
                                 f"depth {depth}", self.conflicts(idx))
        split = self.best_split(idx, labels)
        if split is None:
            raise InferenceError("inseparable leaf",
                                 "no grid primitive separates the conflicting samples",
                                 self.conflicts(idx))
        prim, mask = split
        node = TreeNode(primitive=prim, samples=len(idx))
        node.true_child = self.build(idx[mask], depth + 1)
        node.false_child = self.build(idx[~mask], depth + 1)
        return node

    def conflicts(self, idx, limit: int = 5) -> list[str]:
        by_label: dict[int, int] = {}
        for i in idx:
            by_label.setdefault(int(self.labels[i]), int(i))
        out = []
        keys = sorted(by_label)
        for x in range(len(keys)):
            for y in range(x + 1, len(keys)):
                if self.cover([keys[x], keys[y]]) is None and len(out) < limit:
                    out.append(f"{self.describe(self.samples[by_label[keys[x]]])} <-> "
                               f"{self.describe(self.samples[by_label[keys[y]]])}")
        return out

    def best_split(self, idx, labels):
        M = len(self.inputs)
        onehot = np.zeros((len(idx), M))
        onehot[np.arange(len(idx)), labels] = 1.0
        total = onehot.sum(axis=0)
        best_key, best = None, None
        for f in self.grid.features:
            s = self.scales[f]
            for op_rank, op in enumerate(OPERATORS):
                uses_max = op in (("P", ">="), ("H", "<="))
                for w, window in enumerate(self.grid.windows):
                    v = self.stats.values[(f, w, uses_max)][idx]
                    order = np.argsort(v, kind="stable")
                    vs = v[order]
                    uniq = np.unique(vs)
                    if len(uniq) < 2:
                        continue
                    th = (uniq[:-1] + uniq[1:]) / 2
                    ok = (th > uniq[:-1]) & (th < uniq[1:])
                    if not ok.any():
                        continue
                    cum = np.cumsum(onehot[order], axis=0)
                    n_left = np.searchsorted(vs, uniq[:-1], side="right")
                    left = cum[n_left - 1]
                    right = total - left
                    n_right = len(idx) - n_left
                    score = (left ** 2).sum(axis=1) / n_left + (right ** 2).sum(axis=1) / n_right
                    gap = np.minimum(np.abs(_robustness(op, uniq[:-1], th, s)),
                                     np.abs(_robustness(op, uniq[1:], th, s)))
                    score = np.where(ok, score, -np.inf)
                    # max score, then max gap, then smallest threshold
                    j = np.lexsort((np.arange(len(th)), -gap, -score))[0]
                    key = (score[j], gap[j])
                    if best_key is None or key > best_key:
                        best_key = key
                        best = (f, op, window, float(th[j]), uses_max, w, left[j], right[j],
                                n_left[j], n_right[j])
        if best is None:
            return None
        f, op, window, th, uses_max, w, left, right, nl, nr = best
        parent = Fraction(int((total ** 2).sum()), len(idx))
        gain = (Fraction(int((left ** 2).sum()), int(nl))
                + Fraction(int((right ** 2).sum()), int(nr)) - parent)
        if gain <= 0:
            return None
        v = self.stats.values[(f, w, uses_max)][idx]
        rob = _robustness(op, v, th, self.scales[f])
        prim = Primitive(f, op[0], op[1], window, th, self.atoms.get(f, op[1], th))
        return prim, rob > 0


def infer_location_classifier(samples: list[Sample], traces: list[TimedTrace],
                              grid: PrimitiveGrid, eps: float, inputs, input_metric: Metric,
                              atoms: _AtomTable, describe=str) -> TreeNode:
    """Grow the decision tree for one location's samples."""
    if not samples:
        raise ValueError("no samples")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    stats = _Stats(samples, traces, grid)
    builder = _TreeBuilder(samples, stats, grid, inputs, input_metric, eps, atoms, describe)
    return builder.build(np.arange(len(samples)), 0)


def branches_from_tree(tree: TreeNode, inputs) -> list[Branch]:
    """Group leaves by input; leaves sharing an input become one Or-branch."""
    groups: dict[int, list[tuple[Formula, TreeNode]]] = {}
    for path, leaf in tree.leaves():
        groups.setdefault(leaf.label, []).append((conjoin(path), leaf))
    out = []
    for label in sorted(groups):
        parts = groups[label]
        out.append(Branch(disjoin([p for p, _ in parts]), tuple(inputs[label]), math.inf,
                          sum(leaf.samples for _, leaf in parts)))
    return out


def route(tree: TreeNode, h: TimedTrace, k: int, pmap: PredicateMap, metric: Metric):
    """Leaf reached by history h at index k, with the signed literal values on the way."""
    node, literals = tree, []
    while not node.is_leaf:
        r = float(robust_signal(node.primitive.formula, h, pmap, metric)[k])
        literals.append((node.primitive, r))
        node = node.true_child if r > 0 else node.false_child
    return node, literals


# ------------------------------------------------------------- radii


@dataclass
class Radii:
    delta_c: float
    delta_e: float
    rho_min: float
    margin: float
    transition_margin: float
    lx: float
    lh: float
    alpha: float
    tradeoff: str
    ratio: float
    endpoint_c: float  # largest delta_c with delta_e = 0
    endpoint_e: float  # largest delta_e with delta_c = 0
    binding: str

    def to_json(self) -> dict:
        return {k: _enc(v) if isinstance(v, float) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, data: dict) -> "Radii":
        return cls(**{k: _dec(v) if k not in ("tradeoff", "binding") else v
                      for k, v in data.items()})


def _div(a: float, b: float) -> float:
    return math.inf if b == 0 else a / b


def certified_radii(rho_min: float, margin: float, lx: float, lh: float, alpha: float,
                    tradeoff: str = "equal", ratio: float = 1.0,
                    transition_margin: float = math.inf) -> Radii:
    """Largest (delta_c, delta_e) on the chosen ray satisfying

    L_x*alpha*delta_c + L_h*delta_e <= min(rho_min, g) and delta_e <= m,

    where g is the smallest location-transition margin over the demonstrations.
    ``ratio`` is delta_c / delta_e when ``tradeoff == "ratio"``.
    """
    if not rho_min > 0:
        raise InferenceError("no positive radii",
                             f"minimum demonstration robustness {rho_min} is not positive")
    if not margin > 0:
        raise InferenceError("no positive radii", f"classifier margin {margin} is not positive")
    if not transition_margin > 0:
        raise InferenceError("no positive radii",
                             f"transition margin {transition_margin} is not positive")
    lam = 1.0 if tradeoff == "equal" else float(ratio)
    if tradeoff not in ("equal", "ratio") or lam <= 0:
        raise ValueError("tradeoff must be 'equal' or a positive ratio")
    budget = min(rho_min, transition_margin)
    cands = {
        "classifier margin": margin,
        "robustness": _div(rho_min, lam * lx * alpha + lh),
        "transition margin": _div(transition_margin, lam * lx * alpha + lh),
    }
    binding = min(cands, key=cands.get)
    delta_e = cands[binding]
    delta_c = lam * delta_e
    if math.isinf(delta_e):
        raise InferenceError("no positive radii", "radii are unbounded: Lipschitz constants are 0")
    return Radii(delta_c, delta_e, rho_min, margin, transition_margin, lx, lh, alpha,
                 tradeoff, lam, _div(budget, lx * alpha), min(margin, _div(budget, lh)), binding)


def compute_radii(margin: float, demos: DemonstrationSet, runs: Sequence[Run], scenario,
                  tradeoff: str | None = None, ratio: float | None = None) -> Radii:
    alpha = state_propagation_bound(scenario.system, scenario.state_metric, scenario.horizon)
    g = min(r.min_spatial_margin for r in runs)
    return certified_radii(demos.rho_min, margin, scenario.qmap.lipschitz_x,
                           scenario.qmap.lipschitz_h, alpha,
                           tradeoff or scenario.tradeoff,
                           scenario.ratio if ratio is None else ratio, g)


# --------------------------------------------------------------- classifier


@dataclass
class NominalRun:
    """What the verifier needs from one demonstration: x0 and the feature trace."""

    name: str
    x0: np.ndarray
    features: TimedTrace
    robustness: float


@dataclass
class Classifier:
    locations: dict[int, list[Branch]]
    pmap: PredicateMap
    metric: Metric
    feature_names: tuple[str, ...]
    inputs: tuple[tuple[float, ...], ...]
    epsilon: float
    radii: Radii | None = None
    trees: dict[int, TreeNode] = field(default_factory=dict)
    sample_counts: dict[int, int] = field(default_factory=dict)
    uncovered: list[int] = field(default_factory=list)
    spec: str = ""
    fingerprint: str = ""
    grid: dict = field(default_factory=dict)
    nominal: list[NominalRun] = field(default_factory=list)
    exclusivity: str = "structural"

    @property
    def margin(self) -> float:
        return min((b.margin for bs in self.locations.values() for b in bs), default=math.inf)

    def branch_counts(self) -> dict[int, int]:
        return {loc: len(bs) for loc, bs in self.locations.items()}

    def structural_ok(self) -> bool:
        """Do the branch formulas coincide with the leaves of the stored trees?"""
        if set(self.trees) != set(self.locations):
            return False
        for loc, tree in self.trees.items():
            expect = branches_from_tree(tree, self.inputs)
            got = self.locations[loc]
            if len(expect) != len(got):
                return False
            for e, b in zip(expect, got):
                if pretty(e.formula) != pretty(b.formula) or e.input != b.input:
                    return False
        return True


def _describe(demos: DemonstrationSet, inputs):
    def describe(s: Sample) -> str:
        d = demos.demos[s.demo]
        return (f"{d.name} t={fmt_time(d.agent.times[s.step])} "
                f"u={list(inputs[s.label])}")
    return describe


def infer_classifier(scenario, demos: DemonstrationSet, epsilon: float | None = None,
                     tradeoff: str | None = None, ratio: float | None = None) -> Classifier:
    """Full pipeline: location samples, one tree per location, margins and radii."""
    eps = scenario.epsilon if epsilon is None else float(epsilon)
    grid = PrimitiveGrid.from_scenario(scenario)
    located = collect_location_samples(demos, scenario)
    traces = [d.features for d in demos]
    inputs = scenario.system.inputs
    atoms = _AtomTable(scenario.feature_names, scenario.feature_metric)
    describe = _describe(demos, inputs)
    trees, locations, counts = {}, {}, {}
    for loc in sorted(located.samples):
        samples = located.samples[loc]
        tree = infer_location_classifier(samples, traces, grid, eps, inputs,
                                         scenario.input_metric, atoms, describe)
        trees[loc] = tree
        locations[loc] = branches_from_tree(tree, inputs)
        counts[loc] = len(samples)
    clf = Classifier(locations, atoms.pmap, scenario.feature_metric, scenario.feature_names,
                     inputs, eps, None, trees, counts, located.uncovered, scenario.spec_text,
                     scenario.fingerprint, grid.describe(),
                     [NominalRun(d.name, d.x0.copy(), d.features, rho)
                      for d, rho in zip(demos, demos.robustness)])
    # training margins: robustness of the firing branch at every routed sample
    for loc, samples in located.samples.items():
        branches = clf.locations[loc]
        signals: dict[int, list[np.ndarray]] = {}
        for s in samples:
            if s.demo not in signals:
                signals[s.demo] = [robust_signal(b.formula, traces[s.demo], clf.pmap, clf.metric)
                                   for b in branches]
            vals = [float(sig[s.env_index]) for sig in signals[s.demo]]
            j = int(np.argmax(vals))
            if not vals[j] > 0:
                raise InferenceError("zero margin",
                                     f"sample {describe(s)} has branch robustness {vals[j]}")
            if branches[j].input != tuple(inputs[s.label]) and \
                    scenario.input_metric.dist(branches[j].input, inputs[s.label]) > eps:
                raise InferenceError("zero margin", f"sample {describe(s)} routed outside eps")
            branches[j].margin = min(branches[j].margin, vals[j])
    clf.radii = compute_radii(clf.margin, demos, located.runs, scenario, tradeoff, ratio)
    return clf


# ---------------------------------------------------------- serialisation


def _enc(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _dec(x):
    if isinstance(x, str):
        return float(x)
    return x


def _tree_to_json(node: TreeNode, inputs) -> dict:
    if node.is_leaf:
        return {"leaf": {"input": list(inputs[node.label]), "samples": node.samples}}
    p = node.primitive
    return {
        "split": {"operator": "Once" if p.op == "P" else "Historically", "comparison": p.cmp,
                  "feature": p.feature, "window": [fmt_time(p.window.lo), fmt_time(p.window.hi)],
                  "threshold": p.threshold, "atom": p.atom, "samples": node.samples},
        "true": _tree_to_json(node.true_child, inputs),
        "false": _tree_to_json(node.false_child, inputs),
    }


def _tree_from_json(data: dict, inputs) -> TreeNode:
    if "leaf" in data:
        leaf = data["leaf"]
        u = tuple(float(v) for v in leaf["input"])
        if u not in inputs:
            raise ClassifierFormatError(f"tree leaf input {list(u)} is not in the input set")
        return TreeNode(label=inputs.index(u), samples=int(leaf.get("samples", 0)))
    s = data["split"]
    op = {"Once": "P", "Historically": "H"}[s["operator"]]
    prim = Primitive(int(s["feature"]), op, s["comparison"],
                     Interval(to_time(s["window"][0]), to_time(s["window"][1])),
                     float(s["threshold"]), s["atom"])
    return TreeNode(prim, _tree_from_json(data["true"], inputs),
                    _tree_from_json(data["false"], inputs), samples=int(s.get("samples", 0)))


def classifier_to_json(clf: Classifier) -> dict:
    atoms = {}
    for name, pred in clf.pmap.entries.items():
        w = pred.shape.weights
        f = next(i for i, v in enumerate(w) if v != 0)
        cmp = ">=" if w[f] > 0 else "<="
        atoms[name] = {"feature": f, "comparison": cmp, "threshold": w[f] * pred.shape.offset}
    locs = []
    for loc in sorted(clf.locations):
        entry = {
            "location": loc,
            "samples": clf.sample_counts.get(loc, 0),
            "branches": [{"formula": pretty(b.formula), "input": list(b.input),
                          "margin": _enc(b.margin), "samples": b.samples}
                         for b in clf.locations[loc]],
        }
        if loc in clf.trees:
            entry["tree"] = _tree_to_json(clf.trees[loc], clf.inputs)
        locs.append(entry)
    return {
        "format": FORMAT,
        "scenario_fingerprint": clf.fingerprint,
        "spec": clf.spec,
        "epsilon": clf.epsilon,
        "radii": clf.radii.to_json() if clf.radii else None,
        "coverage_margin": _enc(clf.margin),
        "inputs": [list(u) for u in clf.inputs],
        "features": {"names": list(clf.feature_names), "metric": clf.metric.matrix.tolist()},
        "grid": clf.grid,
        "atoms": atoms,
        "locations": locs,
        "uncovered_locations": list(clf.uncovered),
        "nominal": [{"name": n.name, "x0": n.x0.tolist(), "robustness": n.robustness,
                     "times": [fmt_time(t) for t in n.features.times],
                     "features": n.features.states.tolist()} for n in clf.nominal],
    }


def classifier_from_json(data: dict) -> Classifier:
    if data.get("format") != FORMAT:
        raise ClassifierFormatError(f"unknown classifier format {data.get('format')!r}")
    try:
        names = tuple(data["features"]["names"])
        metric = Metric(data["features"]["metric"])
        pmap = PredicateMap(len(names))
        for name, a in data["atoms"].items():
            pmap.add(AtomicPredicate(name, threshold_shape(len(names), int(a["feature"]),
                                                          a["comparison"],
                                                          float(a["threshold"]))))
        inputs = tuple(tuple(float(v) for v in u) for u in data["inputs"])
        locations, trees, counts = {}, {}, {}
        for entry in data["locations"]:
            loc = int(entry["location"])
            locations[loc] = [Branch(parse_formula(b["formula"], pmap),
                                     tuple(float(v) for v in b["input"]),
                                     float(_dec(b["margin"])), int(b.get("samples", 0)))
                              for b in entry["branches"]]
            counts[loc] = int(entry.get("samples", 0))
            if "tree" in entry:
                trees[loc] = _tree_from_json(entry["tree"], inputs)
        nominal = [NominalRun(n["name"], np.array(n["x0"], dtype=float),
                              TimedTrace([to_time(t) for t in n["times"]],
                                         np.array(n["features"], dtype=float), names),
                              float(n["robustness"]))
                   for n in data.get("nominal", [])]
        radii = Radii.from_json(data["radii"]) if data.get("radii") else None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ClassifierFormatError):
            raise
        raise ClassifierFormatError(f"malformed classifier file: {exc}") from None
    clf = Classifier(locations, pmap, metric, names, inputs, float(data["epsilon"]), radii,
                     trees, counts, list(data.get("uncovered_locations", [])), data.get("spec", ""),
                     data.get("scenario_fingerprint", ""), data.get("grid", {}), nominal)
    clf.exclusivity = "structural" if trees and clf.structural_ok() else "sampled only"
    return clf


def dumps_classifier(clf: Classifier) -> str:
    return json.dumps(classifier_to_json(clf), indent=2) + "\n"


def save_classifier(clf: Classifier, path) -> None:
    atomic_write(path, dumps_classifier(clf))


def load_classifier(path) -> Classifier:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ClassifierFormatError(f"{path}: {exc}") from None
    return classifier_from_json(data)


# ---------------------------------------------------------- condition checks


def ball_points(rng: np.random.Generator, metric: Metric, radius: float, size: int) -> np.ndarray:
    """Uniform points strictly inside the metric ball of the given radius."""
    d = metric.dim
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / d)  # rng.random() < 1
    return np.linalg.solve(metric.factor, (g * r[:, None]).T).T


@dataclass
class Violation:
    condition: int
    demo: str
    sample: int
    step: int | None
    detail: str
    x0: np.ndarray | None = field(default=None, repr=False)
    features: TimedTrace | None = field(default=None, repr=False)


@dataclass
class ConditionReport:
    n_perturb: int
    scale: float
    delta_c: float
    delta_e: float
    exclusivity: str
    counts: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0, 4: 0})
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> dict[int, bool]:
        out = {c: self.counts[c] == 0 for c in (1, 2, 3)}
        out[4] = self.counts[4] == 0 and self.exclusivity == "structural"
        return out

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def first(self, condition: int) -> Violation | None:
        return next((v for v in self.violations if v.condition == condition), None)

    def to_json(self) -> dict:
        return {
            "perturbations": self.n_perturb, "scale": self.scale,
            "delta_c": self.delta_c, "delta_e": self.delta_e,
            "exclusivity": self.exclusivity,
            "conditions": {str(c): {"passed": self.passed[c], "violations": self.counts[c]}
                           for c in (1, 2, 3, 4)},
            "first_violations": [{"condition": v.condition, "demo": v.demo, "sample": v.sample,
                                  "step": v.step, "detail": v.detail}
                                 for v in (self.first(c) for c in (1, 2, 3, 4)) if v],
        }


def _check_one(report: ConditionReport, clf: Classifier, scenario, demo, index: int,
               x0t: np.ndarray, ht: TimedTrace) -> None:
    K = scenario.horizon
    D = scenario.history
    inputs = [tuple(float(v) for v in u) for u in demo.inputs.states]

    def fail(cond, step, detail):
        report.counts[cond] += 1
        if report.first(cond) is None:
            report.violations.append(Violation(cond, demo.name, index, step, detail, x0t, ht))

    # (1) perturbed state and environment, recorded inputs
    xt = simulate_open_loop(scenario.system, x0t, inputs, K, demo.agent.times)
    qt = scenario.q_trace(xt, ht)
    if not eval_boolean(scenario.phi, qt, 0, scenario.pmap):
        fail(1, None, "specification violated under the recorded inputs")
    # (2)-(4) nominal agent, perturbed environment
    qn = scenario.q_trace(demo.agent, ht)
    run = track_location(scenario.sequential, qn, scenario.pmap, scenario.q_metric)
    table = decision_table(clf, ht)
    for k in range(K):
        loc = run.steps[k].state.location
        if loc not in clf.locations:
            fail(3, k, f"location l{loc} not covered")
            continue
        fires = np.flatnonzero(table.truth[loc][:, D + k])
        if len(fires) == 0:
            fail(3, k, f"no branch holds at location l{loc}")
            continue
        if len(fires) > 1:
            fail(4, k, f"{len(fires)} branches hold at location l{loc}")
        for j in fires:
            u = clf.locations[loc][j].input
            if scenario.input_metric.dist(inputs[k], u) > clf.epsilon:
                fail(2, k, f"branch input {list(u)} is farther than eps from recorded "
                           f"{list(inputs[k])} at location l{loc}")


def check_conditions(clf: Classifier, demos: DemonstrationSet, scenario, n_perturb: int = 500,
                     seed: int = 0, scale: float = 0.99,
                     extra: Sequence[tuple[int, np.ndarray, TimedTrace]] = ()) -> ConditionReport:
    """Sampled check of the four classifier conditions inside scale*(delta_c, delta_e).

    Perturbation s goes to demonstration s mod N with its own random stream
    (seed, s).  ``extra`` adds hand-made (demo index, x0, features) cases.
    Exclusivity is structural for tree classifiers and sampled otherwise.
    """
    radii = clf.radii
    report = ConditionReport(n_perturb, scale, radii.delta_c, radii.delta_e, clf.exclusivity)
    rc, re_ = scale * radii.delta_c, scale * radii.delta_e
    for i, x0t, ht in extra:
        _check_one(report, clf, scenario, demos.demos[i], -1, x0t, ht)
    for s in range(n_perturb):
        i = s % len(demos)
        demo = demos.demos[i]
        rng = np.random.default_rng([seed, s])
        x0t = demo.x0 + ball_points(rng, scenario.state_metric, rc, 1)[0]
        h = demo.features
        ht = h.with_states(h.states + ball_points(rng, scenario.feature_metric, re_, len(h)))
        _check_one(report, clf, scenario, demo, s, x0t, ht)
    return report


def aimed_perturbation(clf: Classifier, demos: DemonstrationSet, scenario,
                       radius: float) -> tuple[int, TimedTrace]:
    """Shift the smallest-margin sample's binding feature window by ``radius``.

    Every feature row inside the binding primitive's window moves along the
    direction that lowers that literal fastest in the feature metric, so the
    literal's robustness drops by exactly ``radius``.
    """
    located = collect_location_samples(demos, scenario)
    best = None
    for loc, samples in sorted(located.samples.items()):
        tree = clf.trees.get(loc)
        if tree is None:
            continue
        for s in samples:
            h = demos.demos[s.demo].features
            _, literals = route(tree, h, s.env_index, clf.pmap, clf.metric)
            for prim, r in literals:
                if best is None or abs(r) < best[0]:
                    best = (abs(r), s, prim, r > 0)
    if best is None:
        raise ValueError("classifier has no decision nodes to aim at")
    _, s, prim, holds = best
    h = demos.demos[s.demo].features
    e = np.zeros(clf.metric.dim)
    e[prim.feature] = 1.0
    direction = np.linalg.solve(clf.metric.matrix, e)
    direction /= clf.metric.norm(direction)
    # robustness grows with h_f for ">=" atoms; flip the literal's current sign
    grows = prim.cmp == ">="
    sign = -1.0 if grows == holds else 1.0
    a, b = past_window(h.times, s.env_index, prim.window)
    states = h.states.copy()
    states[a:b] += sign * radius * direction
    return s.demo, h.with_states(states)
