"""Timed traces, feature maps, demonstration sets and trace CSV I/O.

Trace CSV format::

    # optional comment lines
    t,x1,x2
    0,0.0,1.5
    1,0.5,1.5

Timestamps are read as exact decimals; values are read as floats and written
with ``repr`` so a save/load round trip is lossless.
"""
from __future__ import annotations

import logging
import math
import os
import tempfile
from bisect import bisect_left
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .logic.predicates import Metric
from .logic.syntax import fmt_time, to_time

log = logging.getLogger(__name__)


class TraceFormatError(ValueError):
    pass


class TimedTrace:
    """A finite timed state sequence t(0..n_T), x(0..n_T)."""

    __slots__ = ("times", "states", "names")

    def __init__(self, times: Sequence, states, names: Sequence[str] | None = None):
        times = tuple(to_time(t) for t in times)
        states = np.array(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if len(times) == 0:
            raise TraceFormatError("empty trace")
        if states.ndim != 2 or states.shape[0] != len(times):
            raise TraceFormatError(
                f"{len(times)} timestamps but states of shape {states.shape}"
            )
        for i in range(1, len(times)):
            if not times[i] > times[i - 1]:
                raise TraceFormatError(
                    f"timestamps not strictly increasing at index {i} "
                    f"({fmt_time(times[i - 1])} -> {fmt_time(times[i])})"
                )
        if any(isinstance(t, float) for t in times):
            raise TraceFormatError("timestamps must be finite")
        states.setflags(write=False)
        self.times = times
        self.states = states
        if names is None:
            names = [f"x{i + 1}" for i in range(states.shape[1])]
        if len(names) != states.shape[1]:
            raise TraceFormatError("column names do not match state dimension")
        self.names = tuple(names)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.states[k]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TimedTrace)
            and self.times == other.times
            and np.array_equal(self.states, other.states)
        )

    def __repr__(self) -> str:
        return f"TimedTrace(n={len(self)}, dim={self.dim}, t0={fmt_time(self.times[0])})"

    def index_of(self, t) -> int:
        t = to_time(t)
        i = bisect_left(self.times, t)
        if i == len(self.times) or self.times[i] != t:
            raise KeyError(f"no sample at t={fmt_time(t)}")
        return i

    def slice(self, start: int, stop: int) -> "TimedTrace":
        return TimedTrace(self.times[start:stop], self.states[start:stop], self.names)

    def from_time(self, t) -> "TimedTrace":
        """Suffix starting at timestamp ``t`` (inclusive)."""
        return self.slice(self.index_of(t), len(self))

    def with_states(self, states) -> "TimedTrace":
        return TimedTrace(self.times, states, self.names)

    @property
    def period(self) -> Fraction | None:
        """The common sampling period, or None for non-uniform traces."""
        if len(self) < 2:
            return None
        d = self.times[1] - self.times[0]
        for a, b in zip(self.times, self.times[1:]):
            if b - a != d:
                return None
        return d


# ---------------------------------------------------------------- CSV I/O


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise TraceFormatError(f"row {row}: column {col!r}: not a number: {text!r}") from None


def read_trace_text(text: str, source: str = "<string>") -> TimedTrace:
    header = None
    times, rows = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            if cells[0] != "t" or len(cells) < 2:
                raise TraceFormatError(f"{source}: header must be 't,<name>,...', got {line!r}")
            header = cells
            continue
        if len(cells) != len(header):
            raise TraceFormatError(
                f"{source}:{lineno}: expected {len(header)} columns, found {len(cells)}"
            )
        try:
            times.append(to_time(cells[0]))
        except (ValueError, ZeroDivisionError):
            raise TraceFormatError(f"{source}:{lineno}: bad timestamp {cells[0]!r}") from None
        rows.append([_parse_float(c, lineno, n) for c, n in zip(cells[1:], header[1:])])
    if header is None or not rows:
        raise TraceFormatError(f"{source}: empty trace")
    try:
        return TimedTrace(times, np.array(rows, dtype=float), header[1:])
    except TraceFormatError as exc:
        raise TraceFormatError(f"{source}: {exc}") from None


def load_trace(path) -> TimedTrace:
    path = Path(path)
    return read_trace_text(path.read_text(), str(path))


def format_trace(trace: TimedTrace, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(",".join(("t",) + trace.names))
    for t, row in zip(trace.times, trace.states):
        lines.append(",".join([fmt_time(t)] + [repr(float(v)) for v in row]))
    return "\n".join(lines) + "\n"


def atomic_write(path, text: str) -> None:
    """Write-temp-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_trace(trace: TimedTrace, path, comment: str | None = None) -> None:
    atomic_write(path, format_trace(trace, comment))


# ----------------------------------------------------------- feature maps


@dataclass(frozen=True)
class FeatureMap:
    """Affine map s -> C s + d0 with a declared Lipschitz constant.

    ``select`` maps are affine maps whose C picks coordinates.
    """

    matrix: np.ndarray
    offset: np.ndarray
    lipschitz: float
    kind: str = "affine"
    indices: tuple[int, ...] | None = None

    @classmethod
    def select(cls, indices: Sequence[int], in_dim: int, lipschitz: float = 1.0) -> "FeatureMap":
        c = np.zeros((len(indices), in_dim))
        for row, i in enumerate(indices):
            if not 0 <= i < in_dim:
                raise ValueError(f"select index {i} out of range for dimension {in_dim}")
            c[row, i] = 1.0
        return cls(c, np.zeros(len(indices)), float(lipschitz), "select", tuple(indices))

    @classmethod
    def affine(cls, matrix, offset=None, lipschitz: float | None = None) -> "FeatureMap":
        c = np.atleast_2d(np.array(matrix, dtype=float))
        d0 = np.zeros(c.shape[0]) if offset is None else np.array(offset, dtype=float)
        if d0.shape != (c.shape[0],):
            raise ValueError("affine offset length must equal the number of output rows")
        return cls(c, d0, math.inf if lipschitz is None else float(lipschitz))

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    def bound(self, metric_in: Metric, metric_out: Metric) -> float:
        return metric_in.operator_norm(self.matrix, metric_out)

    def validate(self, metric_in: Metric, metric_out: Metric, rtol: float = 1e-9) -> None:
        norm = self.bound(metric_in, metric_out)
        if self.lipschitz < norm * (1 - rtol):
            raise ValueError(
                f"declared Lipschitz constant {self.lipschitz} is below the operator bound {norm}"
            )

    def __call__(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.in_dim:
            raise ValueError(
                f"feature map expects dimension {self.in_dim}, got {states.shape[-1]}"
            )
        if self.kind == "select":
            return states[..., list(self.indices)].copy()
        return _affine(states, self.matrix, self.offset)


def _affine(states: np.ndarray, c: np.ndarray, d0: np.ndarray) -> np.ndarray:
    # explicit accumulation order: a single row and a batch give identical bits
    out = np.empty(states.shape[:-1] + (c.shape[0],))
    for j in range(c.shape[0]):
        acc = states[..., 0] * c[j, 0]
        for i in range(1, c.shape[1]):
            acc = acc + states[..., i] * c[j, i]
        out[..., j] = acc + d0[j]
    return out


def apply_feature_map(f: FeatureMap, trace: TimedTrace, names: Sequence[str] | None = None) -> TimedTrace:
    out = f(trace.states)
    if names is None and f.kind == "select":
        names = [trace.names[i] for i in f.indices]
    return TimedTrace(trace.times, out, names)


@dataclass(frozen=True)
class QMap:
    """Q(x, h) = C_x x + C_h h + d0, the system feature map factored through H."""

    fmap: FeatureMap
    state_dim: int
    lipschitz_x: float
    lipschitz_h: float

    @property
    def cx(self) -> np.ndarray:
        return self.fmap.matrix[:, : self.state_dim]

    @property
    def ch(self) -> np.ndarray:
        return self.fmap.matrix[:, self.state_dim:]

    @property
    def out_dim(self) -> int:
        return self.fmap.out_dim

    def validate(self, mx: Metric, mh: Metric, mq: Metric, rtol: float = 1e-9) -> None:
        bx = mx.operator_norm(self.cx, mq)
        bh = mh.operator_norm(self.ch, mq)
        if self.lipschitz_x < bx * (1 - rtol):
            raise ValueError(f"Q: declared state Lipschitz {self.lipschitz_x} < bound {bx}")
        if self.lipschitz_h < bh * (1 - rtol):
            raise ValueError(f"Q: declared feature Lipschitz {self.lipschitz_h} < bound {bh}")

    def __call__(self, x, h) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        return self.fmap(np.concatenate([x, h], axis=-1))


def build_q_trace(agent: TimedTrace, env_features: TimedTrace, qmap: QMap,
                  names: Sequence[str] | None = None) -> TimedTrace:
    """q(k) = Q(x(k), h(k)) on the agent's timestamps (history rows of h are skipped)."""
    try:
        start = env_features.index_of(agent.times[0])
    except KeyError:
        raise ValueError("environment trace has no sample at the agent's first timestamp") from None
    h = env_features.slice(start, start + len(agent))
    if h.times != agent.times:
        raise ValueError("agent and environment timestamps do not match")
    return TimedTrace(agent.times, qmap(agent.states, h.states), names)


# --------------------------------------------------------- demonstrations


@dataclass
class Demonstration:
    """One nominal pair (x^i, y^i) with the recorded inputs u^i."""

    name: str
    agent: TimedTrace
    env: TimedTrace
    inputs: TimedTrace
    features: TimedTrace | None = None  # h = H(y), filled in by the scenario
    q: TimedTrace | None = None

    @property
    def x0(self) -> np.ndarray:
        return self.agent.states[0]

    @property
    def t0_index(self) -> int:
        """Index of t(0) = agent start inside the environment trace."""
        return self.env.index_of(self.agent.times[0])


@dataclass
class DemonstrationSet:
    demos: list[Demonstration]
    history: int  # D, number of pre-zero environment steps
    robustness: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    @property
    def rho_min(self) -> float:
        return min(self.robustness) if self.robustness else math.nan


def read_demo_dir(path) -> Demonstration:
    path = Path(path)
    missing = [n for n in ("agent.csv", "env.csv", "input.csv") if not (path / n).exists()]
    if missing:
        raise TraceFormatError(f"{path}: missing {', '.join(missing)}")
    return Demonstration(
        path.name,
        load_trace(path / "agent.csv"),
        load_trace(path / "env.csv"),
        load_trace(path / "input.csv"),
    )


def _demo_key(p: Path):
    suffix = p.name[len("demo_"):]
    return (0, int(suffix), "") if suffix.isdigit() else (1, 0, suffix)


def read_demo_root(root) -> list[Demonstration]:
    """Read ``demo_<i>/{agent,env,input}.csv`` subdirectories in index order."""
    root = Path(root)
    dirs = sorted((p for p in root.iterdir() if p.is_dir() and p.name.startswith("demo_")),
                  key=_demo_key)
    if not dirs:
        raise TraceFormatError(f"{root}: no demo_<i> directories")
    return [read_demo_dir(d) for d in dirs]


def write_demo_dir(path, demo: Demonstration) -> None:
    path = Path(path)
    save_trace(demo.agent, path / "agent.csv")
    save_trace(demo.env, path / "env.csv")
    save_trace(demo.inputs, path / "input.csv")
