import math

import numpy as np
import pytest

from mtlloop.logic import AtomicPredicate, Box, Halfspace, Metric, PredicateMap, signed_distance

from .oracles import projected_signed_distance, random_triple

I1 = Metric.identity(1)


def test_box_outside_and_boundary():
    box = AtomicPredicate("b", Box((2.0,), (5.0,)))
    assert signed_distance([1.0], box, I1) == -1.0
    assert signed_distance([2.0], box, I1) == 0.0
    assert signed_distance([3.0], box, I1) == 1.0


def test_halfspace_depth_matches_projection():
    half = AtomicPredicate("a", Halfspace((1.0,), 2.0))
    assert signed_distance([3.0], half, I1) == 1.0
    assert projected_signed_distance([3.0], half.shape, np.eye(1)) == pytest.approx(1.0, abs=1e-7)


def test_weighted_halfspace_closed_form():
    m = Metric([[4.0, 0.0], [0.0, 1.0]])
    half = AtomicPredicate("a", Halfspace((1.0, 0.0), 0.0))
    # moving one unit along x costs 2 under M
    assert signed_distance([1.0, 5.0], half, m) == pytest.approx(2.0)


def test_box_with_infinite_bounds():
    box = AtomicPredicate("o", Box((-math.inf, -1.0), (math.inf, 1.0)))
    m = Metric.identity(2)
    assert signed_distance([100.0, 0.0], box, m) == 1.0
    assert signed_distance([0.0, 4.0], box, m) == -3.0


def test_box_outside_corner_is_euclidean_in_metric():
    box = AtomicPredicate("b", Box((0.0, 0.0), (1.0, 1.0)))
    m = Metric([[4.0, 0.0], [0.0, 9.0]])
    assert signed_distance([2.0, 2.0], box, m) == pytest.approx(-math.sqrt(4 + 9))


def test_metric_validation():
    with pytest.raises(ValueError, match="symmetric"):
        Metric([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="positive definite"):
        Metric([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError, match="square"):
        Metric([[1.0, 0.0]])


def test_shape_validation():
    with pytest.raises(ValueError):
        Halfspace((0.0, 0.0), 1.0)
    with pytest.raises(ValueError):
        Box((2.0,), (1.0,))


def test_box_rejects_non_diagonal_metric():
    box = AtomicPredicate("b", Box((0.0, 0.0), (1.0, 1.0)))
    with pytest.raises(ValueError, match="diagonal"):
        signed_distance([0.5, 0.5], box, Metric([[2.0, 0.5], [0.5, 1.0]]))


def test_dimension_mismatch():
    half = AtomicPredicate("a", Halfspace((1.0, 0.0), 0.0))
    with pytest.raises(ValueError, match="dimension"):
        signed_distance([1.0], half, Metric.identity(2))


def test_pmap_json_roundtrip_and_errors():
    pmap = PredicateMap(2)
    pmap.add(AtomicPredicate("a", Halfspace((1.0, -1.0), 0.5)))
    pmap.add(AtomicPredicate("b", Box((-math.inf, 0.0), (1.0, math.inf))))
    again = PredicateMap.from_json(pmap.to_json())
    assert again.to_json() == pmap.to_json()
    with pytest.raises(ValueError, match="duplicate"):
        pmap.add(AtomicPredicate("a", Halfspace((1.0, 0.0), 0.0)))
    with pytest.raises(ValueError, match="dimension"):
        pmap.add(AtomicPredicate("c", Halfspace((1.0,), 0.0)))
    with pytest.raises(KeyError, match="unresolved"):
        pmap["zz"]


def test_closed_forms_against_projection_sample():
    rng = np.random.default_rng(11)
    for _ in range(60):
        point, shape, m = random_triple(rng)
        got = signed_distance(point, AtomicPredicate("p", shape), Metric(m))
        assert got == pytest.approx(projected_signed_distance(point, shape, m), abs=1e-6)
