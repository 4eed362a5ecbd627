import itertools

import networkx as nx
import numpy as np
import pytest

from fasthgt.evolve import EvoModel
from fasthgt.treecore import RootedEvoTree, WeightedTopology


def rooted_graph(t: RootedEvoTree) -> nx.Graph:
    """Rooted tree as an undirected graph with ``length`` edge attributes."""
    G = nx.Graph()
    G.add_nodes_from(range(t.n_nodes))
    for p, v in t.edges():
        G.add_edge(p, v, length=t.edge_length(v))
    return G


def topology_graph(t: WeightedTopology) -> nx.Graph:
    G = nx.Graph()
    for (u, v), length in zip(t.edges, t.lengths):
        G.add_edge(u, v, length=float(length))
    return G


def center(G: nx.Graph, x, y, z):
    """Node where the three pairwise paths meet."""
    pxy = set(nx.shortest_path(G, x, y))
    pxz = set(nx.shortest_path(G, x, z))
    pyz = set(nx.shortest_path(G, y, z))
    (c,) = pxy & pxz & pyz
    return c


def hop_distances(G: nx.Graph):
    return dict(nx.all_pairs_shortest_path_length(G))


def triplets(n):
    return itertools.combinations(range(n), 3)


def make_rooted(newick_like: dict, names, m=4) -> RootedEvoTree:
    """Build from {child: (parent, prob)}; the root is absent from the keys."""
    n = len(names)
    parent = np.full(2 * n - 1, -1)
    prob = np.full(2 * n - 1, np.nan)
    for v, (p, q) in newick_like.items():
        parent[v] = p
        prob[v] = q
    return RootedEvoTree(tuple(names), parent, prob, m=m)


@pytest.fixture
def model():
    return EvoModel(4, 0.05, 0.1)


def p_for_closeness(c, m=4):
    """Edge probability whose per-edge closeness is ``c``."""
    return (1 - c) * (m - 1) / m


@pytest.fixture
def quartet_09():
    """Quartet AB|CD with every unrooted edge closeness 0.9 (m = 4).

    Leaves A=0 B=1 C=2 D=3; u=4 joins A,B; v=5 joins C,D; root=6 sits on
    the u-v edge, split evenly.
    """
    p = p_for_closeness(0.9)
    half = p_for_closeness(np.sqrt(0.9))
    return make_rooted(
        {0: (4, p), 1: (4, p), 2: (5, p), 3: (5, p), 4: (6, half), 5: (6, half)},
        "ABCD",
    )
