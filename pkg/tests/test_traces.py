import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlloop.logic import Metric
from mtlloop.scenario import DemonstrationError, prepare_demonstrations
from mtlloop.traces import (
    Demonstration,
    FeatureMap,
    QMap,
    TimedTrace,
    TraceFormatError,
    apply_feature_map,
    build_q_trace,
    format_trace,
    load_trace,
    read_demo_dir,
    read_demo_root,
    read_trace_text,
    save_trace,
    write_demo_dir,
)

from .strategies import traces


def test_read_two_point_trace():
    tr = read_trace_text("t,s\n0,0\n1,3\n")
    assert tr.times == (0, 1)
    assert tr.states.tolist() == [[0.0], [3.0]]
    assert tr.names == ("s",)


def test_comments_and_exact_decimals():
    tr = read_trace_text("# a comment\nt,a,b\n-0.1,1,2\n0.2,3,4\n")
    assert str(tr.times[0]) == "-1/10"
    assert tr.period is None or tr.period == tr.times[1] - tr.times[0]


@pytest.mark.parametrize("text, match", [
    ("t,s\n", "empty trace"),
    ("", "empty trace"),
    ("t,s\n0,1\n0,2\n", "strictly increasing"),
    ("t,s\n1,1\n0,2\n", "strictly increasing"),
    ("t,a,b\n0,1,2\n1,3\n", "columns"),
    ("t,s\n0,x\n", "not a number"),
    ("x,s\n0,1\n", "header"),
    ("t,s\nabc,1\n", "bad timestamp"),
])
def test_malformed_traces(text, match):
    with pytest.raises(TraceFormatError, match=match):
        read_trace_text(text)


def test_constructor_invariants():
    with pytest.raises(TraceFormatError):
        TimedTrace([], np.zeros((0, 1)))
    with pytest.raises(TraceFormatError):
        TimedTrace([0, 1], np.zeros((3, 1)))


@settings(max_examples=100, deadline=None)
@given(traces(dim=3), st.floats(-1e6, 1e6, allow_nan=False))
def test_csv_roundtrip_exact(trace, shift):
    trace = trace.with_states(trace.states * 0.1 + shift)
    again = read_trace_text(format_trace(trace))
    assert again == trace
    assert again.names == trace.names


def test_save_load_file(tmp_path, scalar_trace):
    save_trace(scalar_trace, tmp_path / "sub" / "x.csv", comment="hello")
    assert load_trace(tmp_path / "sub" / "x.csv") == scalar_trace


def test_feature_map_examples():
    tr = TimedTrace([0, 1], np.array([[1.0, 2.0], [3.0, 4.0]]), ["a", "b"])
    sel = apply_feature_map(FeatureMap.select([0], 2), tr)
    assert sel.states.tolist() == [[1.0], [3.0]] and sel.names == ("a",)
    ident = apply_feature_map(FeatureMap.affine(np.eye(2)), tr)
    assert ident == tr
    rel = FeatureMap.affine([[1.0, -1.0]], lipschitz=2 ** 0.5)
    rel.validate(Metric.identity(2), Metric.identity(1))
    assert apply_feature_map(rel, tr).states.tolist() == [[-1.0], [-1.0]]
    with pytest.raises(ValueError, match="below the operator bound"):
        FeatureMap.affine([[1.0, -1.0]], lipschitz=1.0).validate(Metric.identity(2),
                                                                 Metric.identity(1))
    with pytest.raises(ValueError, match="dimension"):
        apply_feature_map(FeatureMap.select([0], 3), tr)


def test_feature_map_lipschitz_contract():
    rng = np.random.default_rng(3)
    m_in = Metric([[2.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 0.5]])
    m_out = Metric([[1.0, 0.0], [0.0, 3.0]])
    maps = [FeatureMap.select([2, 0], 3), FeatureMap.affine(rng.normal(size=(2, 3)), [1.0, -2.0])]
    for f in maps:
        f = FeatureMap(f.matrix, f.offset, f.bound(m_in, m_out), f.kind, f.indices)
        f.validate(m_in, m_out)
        for _ in range(1000):
            s, t = rng.normal(size=3) * 5, rng.normal(size=3) * 5
            assert m_out.dist(f(s), f(t)) <= f.lipschitz * m_in.dist(s, t) * (1 + 1e-12) + 1e-12


@settings(max_examples=60)
@given(traces(dim=2), st.data())
def test_feature_map_commutes_with_slicing(trace, data):
    f = FeatureMap.affine([[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]], [0.25, 0.0, -1.0])
    i = data.draw(st.integers(0, len(trace) - 1))
    j = data.draw(st.integers(i + 1, len(trace)))
    assert apply_feature_map(f, trace).slice(i, j) == apply_feature_map(f, trace.slice(i, j))


def test_build_q_trace_stacking_and_history_skip():
    agent = TimedTrace([0, 1], np.array([[1.0], [2.0]]))
    env = TimedTrace([-1, 0, 1], np.array([[9.0], [5.0], [6.0]]))
    q = build_q_trace(agent, env, QMap(FeatureMap.affine(np.eye(2)), 1, 1.0, 1.0))
    assert q.states.tolist() == [[1.0, 5.0], [2.0, 6.0]]
    single = build_q_trace(agent.slice(0, 1), env, QMap(FeatureMap.affine(np.eye(2)), 1, 1.0, 1.0))
    assert len(single) == 1
    with pytest.raises(ValueError, match="timestamp"):
        build_q_trace(TimedTrace([5], [[0.0]]), env, QMap(FeatureMap.affine(np.eye(2)), 1, 1, 1))


def test_fixture_q_traces_positive(demos):
    assert len(demos) == 20
    assert all(r > 0 for r in demos.robustness)
    assert demos.rho_min == pytest.approx(0.5)


def test_demo_dir_roundtrip(tmp_path, demos):
    write_demo_dir(tmp_path / "demo_0", demos.demos[0])
    write_demo_dir(tmp_path / "demo_10", demos.demos[1])
    write_demo_dir(tmp_path / "demo_2", demos.demos[2])
    d = read_demo_dir(tmp_path / "demo_0")
    assert d.agent == demos.demos[0].agent and d.inputs == demos.demos[0].inputs
    assert [x.name for x in read_demo_root(tmp_path)] == ["demo_0", "demo_2", "demo_10"]
    (tmp_path / "demo_bad").mkdir()
    with pytest.raises(TraceFormatError, match="missing"):
        read_demo_dir(tmp_path / "demo_bad")


def test_rejects_non_positive_robustness(scenario, demos):
    good = demos.demos[0]
    # idle agent never reaches r1: robustness negative
    x = np.zeros_like(good.agent.states)
    idle = Demonstration("idle", good.agent.with_states(x), good.env,
                         good.inputs.with_states(np.zeros_like(good.inputs.states)))
    with pytest.raises(DemonstrationError, match="robustness"):
        prepare_demonstrations(scenario, [idle])
