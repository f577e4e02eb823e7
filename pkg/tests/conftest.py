import numpy as np
import pytest

from lapcert.graph import Graph


def path3():
    return Graph(3, [0, 1], [1, 2], [1.0, 1.0])


def triangle():
    return Graph(3, [0, 1, 0], [1, 2, 2], [1.0, 1.0, 1.0])


def random_graph(n, p, seed, weighted=True):
    rng = np.random.default_rng(seed)
    i, j = np.triu_indices(n, 1)
    keep = rng.random(len(i)) < p
    w = rng.uniform(0.5, 2.0, keep.sum()) if weighted else np.ones(keep.sum())
    return Graph(n, i[keep], j[keep], w)


def dense_laplacian(g):
    """Reference Laplacian built entry by entry."""
    L = np.zeros((g.n, g.n))
    for i, j, w in zip(g.src, g.dst, g.w):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    return L


@pytest.fixture
def small_graph():
    return random_graph(30, 0.3, 7)
