import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasthgt.evolve import EvoModel, TreeShape, gen_tree
from fasthgt.treecore import (
    NewickError,
    RootedEvoTree,
    WeightedTopology,
    bipartitions,
    g_depth,
    induced_bipartitions,
    max_length_error,
    parse_newick,
    rf_distance,
    serialize_newick,
    suppress_root,
    topology_matches,
)

from conftest import center, hop_distances, make_rooted, rooted_graph, topology_graph

MODEL = EvoModel(4, 0.05, 0.1)


def brute_g_depth(t: RootedEvoTree) -> int:
    """Cut every edge with networkx and measure nearest-leaf hops per side."""
    G = rooted_graph(t)
    leaves = set(range(t.n_leaves))
    best = 0
    for p, v in t.edges():
        H = G.copy()
        H.remove_edge(p, v)
        depths = []
        for end in (p, v):
            hops = nx.single_source_shortest_path_length(H, end)
            depths.append(min(h for w, h in hops.items() if w in leaves))
        best = max(best, max(depths))
    return best


def brute_splits(t: WeightedTopology) -> set[frozenset[int]]:
    """Cut each internal edge and read off the side without leaf 0."""
    G = topology_graph(t)
    out = set()
    for u, v in t.edges:
        if u < t.n_leaves or v < t.n_leaves:
            continue
        H = G.copy()
        H.remove_edge(u, v)
        side = nx.node_connected_component(H, u)
        if 0 in side:
            side = nx.node_connected_component(H, v)
        out.add(frozenset(w for w in side if w < t.n_leaves))
    return out


def mask_set(masks):
    return {frozenset(i for i in range(m.bit_length()) if m >> i & 1) for m in masks}


def test_three_leaf_root_suppression_gives_star():
    t = parse_newick("[&metric=prob](A:0.1,(B:0.1,C:0.1):0.1);")
    u = suppress_root(t)
    assert u.n_leaves == 3 and u.n_nodes == 4 and len(u.edges) == 3
    assert sorted(u.names) == ["A", "B", "C"]
    assert bipartitions(u) == frozenset()


def test_root_edge_merges_lengths_and_weights():
    t = make_rooted({0: (4, 0.05), 1: (4, 0.05), 2: (5, 0.05), 3: (5, 0.05), 4: (6, 0.1), 5: (6, 0.1)}, "ABCD")
    u = suppress_root(t)
    k = u.edge_index(4, 5)
    # -2 ln(1 - 0.4/3), evaluated independently with mpmath
    assert u.lengths[k] == pytest.approx(0.286201687281346659885, abs=1e-12)
    assert u.lengths[k] == pytest.approx(t.edge_length(4) + t.edge_length(5), abs=1e-15)
    assert u.weights[k] == pytest.approx(1 - 0.9 * 0.9)
    for v in range(4):
        assert u.weights[u.edge_index(v, u.neighbors(v)[0])] == pytest.approx(0.05)


@pytest.mark.parametrize("seed", range(5))
def test_suppress_root_preserves_leaves_and_shape(seed):
    t = gen_tree(12, "uniform", MODEL, seed=seed)
    u = suppress_root(t)
    assert u.names == t.names
    assert u.n_nodes == 2 * 12 - 2 and len(u.edges) == 2 * 12 - 3
    assert all(len(u.adjacency[v]) == 3 for v in range(12, u.n_nodes))
    # leaf-to-leaf path lengths are unchanged by suppressing the root
    G = rooted_graph(t)
    d = dict(nx.all_pairs_dijkstra_path_length(G, weight="length"))
    D = u.leaf_distance_matrix()
    for i, j in itertools.combinations(range(12), 2):
        assert D[i, j] == pytest.approx(d[i][j], abs=1e-12)


def test_bipartitions_small_cases():
    q = parse_newick("((A:1,B:1):1,(C:1,D:1):1);")
    assert mask_set(bipartitions(q)) == {frozenset({2, 3})}
    star = parse_newick("(A:1,B:1,C:1);")
    assert bipartitions(star) == frozenset()
    cat = parse_newick("(A:1,(B:1,(C:1,(D:1,E:1):1):1):1);")
    # side without A: {C,D,E} and {D,E}; brute-force cut agrees
    assert mask_set(bipartitions(cat)) == {frozenset({2, 3, 4}), frozenset({3, 4})}
    assert mask_set(bipartitions(cat)) == brute_splits(cat)


@pytest.mark.parametrize("seed", range(10))
def test_bipartitions_match_brute_force(seed):
    u = suppress_root(gen_tree(15, "uniform", MODEL, seed=seed))
    assert mask_set(bipartitions(u)) == brute_splits(u)
    assert len(bipartitions(u)) == 15 - 3


def test_rf_examples():
    q1 = parse_newick("((A:1,B:1):1,(C:1,D:1):1);")
    q2 = parse_newick("((A:1,C:1):1,(B:1,D:1):1);")
    assert rf_distance(q1, q1) == 0
    assert rf_distance(q1, q2) == 2
    assert not topology_matches(q1, q2)
    assert topology_matches(q1, parse_newick("((D:3,C:1):1,(B:1,A:2):1);"))
    s1 = parse_newick("(A:1,B:1,C:1);")
    s2 = parse_newick("(C:5,A:1,B:2);")
    assert topology_matches(s1, s2)


def test_rf_rejects_different_leaf_sets():
    q1 = parse_newick("((A:1,B:1):1,(C:1,D:1):1);")
    q2 = parse_newick("((A:1,B:1):1,(C:1,E:1):1);")
    with pytest.raises(ValueError):
        rf_distance(q1, q2)


def test_edge_order_does_not_matter():
    u = suppress_root(gen_tree(20, "uniform", MODEL, seed=3))
    perm = np.random.default_rng(0).permutation(len(u.edges))
    shuffled = WeightedTopology(u.names, tuple(u.edges[k][::-1] for k in perm), u.lengths[perm])
    assert topology_matches(u, shuffled)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 14), st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_rf_is_a_metric(n, s1, s2, s3):
    a, b, c = (suppress_root(gen_tree(n, "uniform", MODEL, seed=s)) for s in (s1, s2, s3))
    ab, ba, bc, ac = rf_distance(a, b), rf_distance(b, a), rf_distance(b, c), rf_distance(a, c)
    assert ab == ba
    assert 0 <= ab <= 2 * (n - 3)
    assert ac <= ab + bc
    assert (ab == 0) == topology_matches(a, b)


def test_random_ten_leaf_rf_bound():
    a = suppress_root(gen_tree(10, "uniform", MODEL, seed=1))
    b = suppress_root(gen_tree(10, "uniform", MODEL, seed=2))
    assert 0 <= rf_distance(a, b) <= 14


def test_induced_bipartitions_contract_branchless_paths():
    u = suppress_root(gen_tree(12, "uniform", MODEL, seed=7))
    keep = [0, 2, 3, 5, 8, 11]
    # oracle: build the induced subtree with networkx and contract degree-2 nodes
    G = topology_graph(u)
    S = nx.Graph()
    for i, j in itertools.combinations(keep, 2):
        nx.add_path(S, nx.shortest_path(G, i, j))
    splits = set()
    for a, b in S.edges:
        H = S.copy()
        H.remove_edge(a, b)
        side = {w for w in nx.node_connected_component(H, a) if w in keep}
        other = set(keep) - side
        if min(len(side), len(other)) >= 2:
            splits.add(frozenset(other if 0 in side else side))
    assert mask_set(induced_bipartitions(u, keep)) == splits


# --- g-depth -------------------------------------------------------------


def balanced(n):
    return gen_tree(n, "balanced", MODEL, seed=0)


def test_g_depth_frozen_values():
    # values produced by brute_g_depth (edge cut + BFS)
    assert brute_g_depth(balanced(4)) == 2
    assert g_depth(balanced(4)) == 2
    assert brute_g_depth(balanced(8)) == 3
    assert g_depth(balanced(8)) == 3
    cat = gen_tree(8, "caterpillar", MODEL, seed=0)
    assert brute_g_depth(cat) == 2
    assert g_depth(cat) == 2


@pytest.mark.parametrize("shape", list(TreeShape))
@pytest.mark.parametrize("n", [3, 4, 5, 7, 8, 9, 16, 17, 30])
def test_g_depth_agrees_with_brute_force_and_bound(shape, n):
    for seed in range(3):
        t = gen_tree(n, shape, MODEL, seed=seed)
        d = g_depth(t)
        assert d == brute_g_depth(t)
        assert d <= 1 + math.floor(math.log2(n - 1))


@pytest.mark.parametrize("seed", range(20))
def test_every_nonroot_internal_node_has_a_shallow_defining_triplet(seed):
    n = 4 + seed % 9
    t = gen_tree(n, "uniform", MODEL, seed=seed)
    d = g_depth(t)
    G = rooted_graph(t)
    hops = hop_distances(G)
    best = {}
    for x, y, z in itertools.combinations(range(n), 3):
        p = center(G, x, y, z)
        worst = max(hops[x][p], hops[y][p], hops[z][p])
        best[p] = min(best.get(p, worst), worst)
    for p in range(n, t.n_nodes):
        if p != t.root:
            assert best[p] <= d + 1
    # every leaf belongs to such a triplet
    covered = set()
    for x, y, z in itertools.combinations(range(n), 3):
        p = center(G, x, y, z)
        if max(hops[x][p], hops[y][p], hops[z][p]) <= d + 1:
            covered |= {x, y, z}
    assert covered == set(range(n))


# --- Newick --------------------------------------------------------------


def test_parse_simple_newick():
    t = parse_newick("(A:0.1,B:0.1,(C:0.1,D:0.1):0.1);")
    assert t.n_leaves == 4 and len(bipartitions(t)) == 1
    assert np.allclose(t.lengths, 0.1)


@pytest.mark.parametrize("text, offset", [("(A,(B);", 0), ("((A,B),(C,D);", 0), ("(A,B,(C,D))", 11), ("(A,B,(C,D)", 0)])
def test_parse_errors_report_offset(text, offset):
    with pytest.raises(NewickError) as info:
        parse_newick(text)
    assert info.value.position == offset


def test_duplicate_leaf_names_rejected():
    with pytest.raises(NewickError, match="duplicate"):
        parse_newick("(A:1,B:1,(A:1,C:1):1);")


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_topology(seed):
    u = suppress_root(gen_tree(50, "uniform", MODEL, seed=seed))
    text = serialize_newick(u)
    assert text.startswith("[&metric=dist]")
    back = parse_newick(text)
    assert rf_distance(u, back) == 0
    assert max_length_error(u, back) == 0.0


@pytest.mark.parametrize("shape", ["uniform", "caterpillar"])
def test_round_trip_rooted(shape):
    t = gen_tree(2000 if shape == "caterpillar" else 50, shape, MODEL, seed=1)
    back = parse_newick(serialize_newick(t))
    assert isinstance(back, RootedEvoTree)
    assert sorted(back.names) == sorted(t.names)
    assert back.m == t.m
    for v, name in enumerate(t.names):
        assert back.edge_prob[back.leaf_index(name)] == t.edge_prob[v]
    assert rf_distance(suppress_root(t), suppress_root(back)) == 0
    assert g_depth(back) == g_depth(t)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, seed):
    u = suppress_root(gen_tree(n, "yule_harding", MODEL, seed=seed))
    back = parse_newick(serialize_newick(u))
    assert topology_matches(u, back) and max_length_error(u, back) == 0.0


def test_quoted_labels_round_trip():
    u = parse_newick("('leaf one':1,B:2,(C:1,'d,e':1):1);")
    assert "leaf one" in u.names and "d,e" in u.names
    assert topology_matches(u, parse_newick(serialize_newick(u)))


def test_topology_invariants_enforced():
    with pytest.raises(ValueError):
        WeightedTopology(("A", "B", "C"), ((0, 3), (1, 3), (2, 3)), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        WeightedTopology(("A", "B", "C", "D"), ((0, 4), (1, 4), (2, 4), (3, 4), (4, 5)), np.ones(5))
