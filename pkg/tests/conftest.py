import numpy as np
import pytest

from mtlloop.fixtures import generate_demos, lead_follow_config, write_fixture
from mtlloop.inference import infer_classifier
from mtlloop.logic import AtomicPredicate, Box, Halfspace, PredicateMap
from mtlloop.scenario import prepare_demonstrations, scenario_from_dict
from mtlloop.traces import TimedTrace


@pytest.fixture(scope="session")
def scenario():
    return scenario_from_dict(lead_follow_config())


@pytest.fixture(scope="session")
def demos(scenario):
    return prepare_demonstrations(scenario, generate_demos(scenario, 20, seed=0))


@pytest.fixture(scope="session")
def classifier(scenario, demos):
    return infer_classifier(scenario, demos)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    write_fixture(root, 20, 0)
    return root


@pytest.fixture
def scalar_pmap():
    """s >= 2 as a halfspace on a 1-D signal, plus a box [2, 5]."""
    pmap = PredicateMap(1)
    pmap.add(AtomicPredicate("a", Halfspace((1.0,), 2.0)))
    pmap.add(AtomicPredicate("b", Box((2.0,), (5.0,))))
    return pmap


@pytest.fixture
def scalar_trace():
    return TimedTrace([0, 1, 2, 3], np.array([[0.0], [3.0], [5.0], [1.0]]), ["s"])


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
