"""Weighted metrics, atomic predicates and closed-form signed distances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class Metric:
    """d(a, b) = sqrt((a-b)^T M (a-b)) for a symmetric positive-definite M."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"metric matrix must be square, got shape {m.shape}")
        if not np.array_equal(m, m.T):
            raise ValueError("metric matrix is not symmetric")
        try:
            # upper factor R with M = R^T R, so ||v||_M = ||R v||_2
            self.factor = np.linalg.cholesky(m).T
        except np.linalg.LinAlgError:
            raise ValueError("metric matrix is not positive definite") from None
        self.matrix = m
        self.matrix.setflags(write=False)
        self.inverse = np.linalg.inv(m)
        self.is_diagonal = bool(np.count_nonzero(m - np.diag(np.diag(m))) == 0)

    @classmethod
    def identity(cls, dim: int) -> "Metric":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return math.sqrt(max(float(v @ self.matrix @ v), 0.0))

    def norms(self, vs) -> np.ndarray:
        """Row-wise norms of a (n, dim) array."""
        vs = np.asarray(vs, dtype=float)
        quad = np.einsum("ij,jk,ik->i", vs, self.matrix, vs)
        return np.sqrt(np.maximum(quad, 0.0))

    def dist(self, a, b) -> float:
        return self.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))

    def dual_norm(self, w) -> float:
        """sqrt(w^T M^-1 w): the norm of the linear functional s -> w.s."""
        w = np.asarray(w, dtype=float)
        return math.sqrt(float(w @ np.linalg.solve(self.matrix, w)))

    def operator_norm(self, matrix, out: "Metric") -> float:
        """Induced norm of s -> C s from (R^n, self) to (R^p, out)."""
        c = np.asarray(matrix, dtype=float)
        scaled = out.factor @ c @ np.linalg.inv(self.factor)
        return float(np.linalg.norm(scaled, 2)) if scaled.size else 0.0

    def __eq__(self, other):
        return isinstance(other, Metric) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self):
        return f"Metric({self.matrix.tolist()})"


@dataclass(frozen=True)
class Halfspace:
    """{s : w.s >= c}"""

    weights: tuple[float, ...]
    offset: float

    def __post_init__(self):
        if not any(self.weights):
            raise ValueError("halfspace weight vector must be nonzero")

    @property
    def dim(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box lower <= s <= upper; bounds may be infinite."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("box bounds have different lengths")
        for lo, hi in zip(self.lower, self.upper):
            if not lo <= hi:
                raise ValueError(f"box lower bound {lo} exceeds upper bound {hi}")

    @property
    def dim(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class AtomicPredicate:
    name: str
    shape: Halfspace | Box

    @property
    def dim(self) -> int:
        return self.shape.dim

    def check_metric(self, metric: Metric) -> None:
        if metric.dim != self.dim:
            raise ValueError(
                f"predicate {self.name!r} has dimension {self.dim}, metric has {metric.dim}"
            )
        if isinstance(self.shape, Box) and not metric.is_diagonal:
            raise ValueError(f"box predicate {self.name!r} requires a diagonal metric")

    def contains(self, states) -> np.ndarray:
        """Row-wise membership for a (n, dim) array."""
        states = _as_rows(states, self.dim)
        if isinstance(self.shape, Halfspace):
            return _linear(states, self.shape.weights) - self.shape.offset >= 0
        lo = np.array(self.shape.lower)
        hi = np.array(self.shape.upper)
        return np.all((states >= lo) & (states <= hi), axis=1)

    def signed_distances(self, states, metric: Metric) -> np.ndarray:
        """Depth inside the predicate set (>= 0) or minus the distance to it."""
        states = _as_rows(states, self.dim)
        self.check_metric(metric)
        if isinstance(self.shape, Halfspace):
            scale = metric.dual_norm(self.shape.weights)
            return (_linear(states, self.shape.weights) - self.shape.offset) / scale
        return _box_signed(states, self.shape, np.sqrt(np.diag(metric.matrix)))


def _as_rows(states, dim: int) -> np.ndarray:
    arr = np.asarray(states, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != dim:
        raise ValueError(f"dimension mismatch: state has {arr.shape[1]}, predicate has {dim}")
    return arr


def _linear(states: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    # fixed left-to-right accumulation, identical for one row or many
    acc = states[:, 0] * weights[0]
    for i in range(1, len(weights)):
        acc = acc + states[:, i] * weights[i]
    return acc


def _box_signed(states: np.ndarray, box: Box, axis_scale: np.ndarray) -> np.ndarray:
    lo = np.array(box.lower)
    hi = np.array(box.upper)
    with np.errstate(invalid="ignore"):
        below = lo - states  # > 0 when under the lower face
        above = states - hi
    excess = np.maximum(np.maximum(below, above), 0.0)
    excess = np.nan_to_num(excess, nan=0.0)
    outside = np.sqrt(np.sum((excess * axis_scale) ** 2, axis=1))
    # depth: nearest face, measured along its axis
    face_gap = np.minimum(-below, -above) * axis_scale
    face_gap = np.where(np.isnan(face_gap), math.inf, face_gap)
    depth = np.min(face_gap, axis=1)
    inside = np.all((states >= lo) & (states <= hi), axis=1)
    return np.where(inside, depth, -outside)


def signed_distance(point, pred: AtomicPredicate, metric: Metric) -> float:
    """Signed distance of a single point to ``pred``'s set."""
    return float(pred.signed_distances(np.asarray(point, dtype=float)[None, :], metric)[0])


@dataclass
class PredicateMap:
    """Named atomic predicates over one signal space."""

    dim: int
    entries: dict[str, AtomicPredicate] = field(default_factory=dict)

    def __post_init__(self):
        for name, pred in self.entries.items():
            if pred.name != name:
                raise ValueError(f"predicate registered as {name!r} is named {pred.name!r}")
            if pred.dim != self.dim:
                raise ValueError(
                    f"predicate {name!r} has dimension {pred.dim}, expected {self.dim}"
                )

    def add(self, pred: AtomicPredicate) -> None:
        if pred.name in self.entries:
            raise ValueError(f"duplicate predicate name {pred.name!r}")
        if pred.dim != self.dim:
            raise ValueError(f"predicate {pred.name!r} has dimension {pred.dim}, expected {self.dim}")
        self.entries[pred.name] = pred

    def names(self):
        return self.entries.keys()

    def __getitem__(self, name: str) -> AtomicPredicate:
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f"unresolved atomic predicate {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def validate(self, metric: Metric) -> None:
        for pred in self.entries.values():
            pred.check_metric(metric)

    @classmethod
    def from_json(cls, data: Mapping) -> "PredicateMap":
        """Build from ``{"dimension": n, "predicates": {name: spec}}``."""
        pmap = cls(int(data["dimension"]))
        for name, spec in data["predicates"].items():
            pmap.add(AtomicPredicate(name, shape_from_json(spec)))
        return pmap

    def to_json(self) -> dict:
        return {
            "dimension": self.dim,
            "predicates": {n: shape_to_json(p.shape) for n, p in self.entries.items()},
        }


def _num(x) -> float:
    if x is None:
        raise ValueError("missing numeric value")
    return float(x)


def shape_from_json(spec: Mapping) -> Halfspace | Box:
    if "halfspace" in spec:
        h = spec["halfspace"]
        return Halfspace(tuple(_num(w) for w in h["weights"]), _num(h["offset"]))
    if "box" in spec:
        b = spec["box"]
        return Box(tuple(_num(v) for v in b["lower"]), tuple(_num(v) for v in b["upper"]))
    raise ValueError(f"predicate needs a 'halfspace' or 'box' entry: {dict(spec)}")


def _enc(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def shape_to_json(shape: Halfspace | Box) -> dict:
    if isinstance(shape, Halfspace):
        return {"halfspace": {"weights": list(shape.weights), "offset": shape.offset}}
    return {"box": {"lower": [_enc(v) for v in shape.lower],
                    "upper": [_enc(v) for v in shape.upper]}}
