import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from hypgad.graph import Graph

torch.set_num_threads(1)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_graph(n=30, d=5, p=0.15, seed=0, n_classes=3):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    y = rng.integers(0, n_classes, n)
    return Graph.from_edges(X, np.stack([iu[keep], ju[keep]], 1), class_labels=y)


def path_graph(n, features=None):
    X = np.eye(n) if features is None else np.asarray(features, dtype=float)
    return Graph.from_edges(X, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture
def small_graph():
    return random_graph()


@pytest.fixture(scope="session")
def sparse_graph():
    """2000 nodes, mean degree about 4, three classes."""
    rng = np.random.default_rng(7)
    n = 2000
    m = 4000
    edges = rng.integers(0, n, size=(m, 2))
    X = rng.random((n, 8))
    y = rng.integers(0, 3, n)
    return Graph.from_edges(X, edges, class_labels=y)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
