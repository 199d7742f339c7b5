import numpy as np
import pytest

from graphfeat.graph import FeatureMatrix, Graph


@pytest.fixture
def path_graph():
    """Path 0-1-2 with features (1,0), (1,1), (0,1)."""
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    x = FeatureMatrix(np.array([[1, 0], [1, 1], [0, 1]], dtype=np.float32))
    return g, x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(rng, n, p):
    """Erdos-Renyi edge list as an (m, 2) array with u < v."""
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return np.stack([iu[keep], ju[keep]], axis=1)


# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
