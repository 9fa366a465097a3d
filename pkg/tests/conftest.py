import os

import numpy as np
import pytest

from acd.graph import Network

DATA_DIR = os.environ.get("ACD_DATA_DIR", os.path.join(os.path.dirname(__file__), "data"))


def data_path(name):
    return os.path.join(DATA_DIR, name)


def require_dataset(name):
    """Real datasets are user-supplied (see tests/data/README.md); skip if absent."""
    path = data_path(name)
    if not os.path.exists(path):
        pytest.skip(f"dataset file {path} not present; place it there or set ACD_DATA_DIR")
    return path


def random_params(rng, n, k, pi=None, mu=None):
    from acd.model import ModelParams

    pi = rng.uniform(0.2, 2.0) if pi is None else pi
    mu = rng.uniform(0.05, 0.95) if mu is None else mu
    return ModelParams(rng.uniform(0.05, 1.0, (n, k)),
                       rng.uniform(0.05, 1.0, (n, k)),
                       rng.uniform(0.1, 2.0, k), pi, mu)


def random_network(rng, n, density=0.3, directed=False, max_weight=2):
    a = (rng.random((n, n)) < density) * rng.integers(1, max_weight + 1, (n, n))
    np.fill_diagonal(a, 0)
    if not directed:
        a = np.triu(a, 1)
        a = a + a.T
    return Network.from_dense(a, directed=directed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def karate():
    """Zachary's karate club with the post-split factions as attributes."""
    nx = pytest.importorskip("networkx")
    g = nx.karate_club_graph()
    entries = {}
    for i, j in g.edges():
        entries[(i, j)] = 1
        entries[(j, i)] = 1
    attrs = tuple(g.nodes[i]["club"] for i in range(g.number_of_nodes()))
    return Network(g.number_of_nodes(), False, entries,
                   tuple(str(i) for i in range(g.number_of_nodes())), attrs)
