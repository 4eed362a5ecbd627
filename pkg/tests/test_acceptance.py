"""Acceptance suite.

Each test prints a single ``[PASS]`` or ``[FAIL]`` line for its criterion
(shown live, outside pytest's capture) and then asserts the same outcome.
"""

import io
import itertools
import math

import networkx as nx
import numpy as np
import pytest

from fasthgt.cli import aggregate, run_bench, run_trial, trial_seed
from fasthgt.distmat import (
    DistanceMatrix,
    center_leg,
    center_tail,
    closeness_to_distance,
    distance_matrix_from_sequences,
    hoeffding_pair_tail,
    triplet_closeness,
    write_phylip,
)
from fasthgt.evolve import (
    EvoModel,
    SequenceSet,
    all_node_distances,
    evolve_sequences,
    exact_closeness,
    exact_distance_matrix,
    gen_tree,
    site_pattern_distribution,
)
from fasthgt.hgt import (
    HgtFailure,
    ReconTree,
    SplitKind,
    default_delta_min,
    edge_side_leaves,
    fast_hgt,
    split_edge,
)
from fasthgt.hgt import _relevant_pairs
from fasthgt.treecore import g_depth, max_length_error, rf_distance, suppress_root

from conftest import center, make_rooted, p_for_closeness, rooted_graph


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}")
        assert ok, detail

    return emit


def test_criterion_1_exact_distance_recovery(report):
    model = EvoModel(4, 0.05, 0.1)
    dmin = default_delta_min(4, model.f)
    bad = []
    worst = 0.0
    for n in (5, 10, 50, 100):
        for trial in range(100):
            t = gen_tree(n, "uniform", model, seed=trial_seed(n, trial))
            truth = suppress_root(t)
            topo = fast_hgt(exact_distance_matrix(t), dmin).to_topology()
            rf, err = rf_distance(truth, topo), max_length_error(truth, topo)
            worst = max(worst, err)
            if rf != 0 or not err < 2 * dmin:
                bad.append((n, trial, rf, err))
    report(1, "exact-distance recovery", not bad,
           f"400 trees, {len(bad)} failures, worst length error {worst:.2e} (limit {2 * dmin:.4f})")


def test_criterion_2_sampled_recovery_at_analytic_length(report):
    model = EvoModel(4, 0.05, 0.05)
    delta = 0.2
    dmin = default_delta_min(4, model.f)
    trials = 60
    rows = [
        run_trial(8, model, "uniform", trial_seed(2024, i), dmin, patterns=True, delta=delta)
        for i in range(trials)
    ]
    agg = aggregate(rows)
    ells = sorted({r["ell"] for r in rows})
    ok = agg["recovery_rate"] >= 0.66
    report(2, "sampled recovery at the analytic length", ok,
           f"{agg['recovered']}/{trials} recovered (rate {agg['recovery_rate']:.3f}, threshold 0.66), "
           f"ell in {ells[0]:.3e}..{ells[-1]:.3e}")


def _three_leaf_tree(edge_closeness):
    """Leaf 0 under the root; leaves 1, 2 under node 4; every edge equally close."""
    q = p_for_closeness(edge_closeness)
    return make_rooted({0: (3, q), 4: (3, q), 1: (4, q), 2: (4, q)}, "XYZ")


def test_criterion_3_tail_bound_conformance(report):
    alpha, eps, reps = 4 / 3, 0.1, 10**4
    t = _three_leaf_tree(0.5 ** (1 / 3))

    # pair event {c_hat / c <= 1 - eps} for X, Y with c = 0.5, ell = 2000
    ell = 2000
    c = exact_closeness(t, 0, 1)
    assert c == pytest.approx(0.5, abs=1e-12)
    s = evolve_sequences(t, reps * ell, seed=31)
    match = (s.codes[0] == s.codes[1]).reshape(reps, ell).sum(axis=1)
    c_hat = (match - (ell - match) / 3) / ell
    freq = np.mean(c_hat / c <= 1 - eps)
    bound = hoeffding_pair_tail(ell, c, eps, alpha)
    se = math.sqrt(max(freq * (1 - freq), 1 / reps) / reps)
    pair_ok = freq <= bound + 3 * se

    # center event {d_hat_XP - d_XP >= -ln(1 - eps) / 2} for X = leaf 0 and its triplet center
    ell_c = 10**4
    G = rooted_graph(t)
    p = center(G, 0, 1, 2)
    d_xp = all_node_distances(t)[0, p]
    c_xyz = triplet_closeness(exact_closeness(t, 0, 1), exact_closeness(t, 0, 2), exact_closeness(t, 1, 2))
    patterns, probs = site_pattern_distribution(t)
    counts = np.random.default_rng(32).multinomial(ell_c, probs, size=reps)
    agree = {}
    for i, j in ((0, 1), (0, 2), (1, 2)):
        same = patterns[:, i] == patterns[:, j]
        k = counts[:, same].sum(axis=1)
        agree[i, j] = (k - (ell_c - k) / 3) / ell_c
    hits = 0
    for r in range(reps):
        d = {key: closeness_to_distance(val[r]) for key, val in agree.items()}
        if any(math.isinf(v) for v in d.values()):
            hits += 1  # an infinite estimate overshoots every finite threshold
            continue
        hits += center_leg(d[0, 1], d[0, 2], d[1, 2]) - d_xp >= -math.log(1 - eps) / 2
    cfreq = hits / reps
    cbound = center_tail(ell_c, c_xyz, eps, alpha)
    cse = math.sqrt(max(cfreq * (1 - cfreq), 1 / reps) / reps)
    center_ok = cfreq <= cbound + 3 * cse

    report(3, "tail-bound conformance", pair_ok and center_ok,
           f"pair freq {freq:.4f} vs bound {bound:.4f} (+3SE {3 * se:.4f}); "
           f"center freq {cfreq:.4f} vs bound {cbound:.4f} (+3SE {3 * cse:.4f}, ell {ell_c})")


def test_criterion_4_complexity(report):
    sizes = [200, 400, 800, 1600, 3200]
    res = run_bench(sizes, seed=4, repeats=1)
    rows = res["rows"]
    count_ok = abs(res["count_slope"] - 2.0) <= 0.1
    time_ok = res["time_slope"] <= 2.3
    space_ok = all(r["peak_live_tuples"] <= r["n"] and r["peak_nodes"] <= 2 * r["n"] for r in rows)
    exact_ok = all(r["rf"] == 0 for r in rows)
    times = ", ".join(f"{r['n']}:{r['seconds']:.2f}s" for r in rows)
    report(4, "complexity", count_ok and time_ok and space_ok and exact_ok,
           f"count slope {res['count_slope']:.3f}, time slope {res['time_slope']:.3f}, "
           f"space ok {space_ok}, recovered {exact_ok} [{times}]")


def _structural_violations(t, dmin):
    """Count invariant violations over one exact-distance run."""
    violations = []
    n = t.n_leaves
    G = rooted_graph(t)
    nodes = all_node_distances(t)
    dm = exact_distance_matrix(t)
    c = dm.closeness

    # ordering facts on exact closenesses, for every triplet
    for x, y, z in itertools.combinations(range(n), 3):
        p = center(G, x, y, z)
        a, b, e = sorted((x, y, z), key=lambda v: exact_closeness(t, v, p))
        cxyz = triplet_closeness(c[a, b], c[a, e], c[b, e])
        tol = 1e-12
        if not (c[a, b] <= c[a, e] * (1 + tol) and c[a, e] <= c[b, e] * (1 + tol)):
            violations.append(("ordering", a, b, e))
        if not c[a, e] >= (2 / 3) * cxyz * (1 - tol):
            violations.append(("two-thirds", a, b, e))
        if not exact_closeness(t, b, p) ** 2 >= cxyz / 3 * (1 - tol):
            violations.append(("middle leg", a, b, e))

    if not g_depth(t) <= 1 + math.floor(math.log2(n - 1)):
        violations.append(("g-depth bound", g_depth(t)))

    def observer(tree: ReconTree, S, k):
        where = [v if tree.is_leaf(v) else center(G, *tree.defs[v]) for v in range(tree.n_nodes)]
        outside = np.flatnonzero(~tree.inserted)
        for q1, q2 in tree.edges():
            if not set(tree.defs[q1]) & set(tree.defs[q2]):
                violations.append(("edge sharing", q1, q2))
            sides = edge_side_leaves(tree, q1, q2)
            on_path = nx.shortest_path(G, where[q1], where[q2])
            for x, y in _relevant_pairs(tree, sides):
                for m in outside:
                    out = split_edge(tree, q1, q2, int(m), x, y, dm, dmin, sides)
                    true_c = center(G, int(m), x, y)
                    if true_c in (where[q1], where[q2]):
                        expect = SplitKind.TOO_CLOSE
                    elif true_c in on_path:
                        expect = SplitKind.SPLIT
                    else:
                        expect = SplitKind.OUTSIDE
                    if out.kind is not expect:
                        violations.append(("classification", q1, q2, int(m), x, y))
                    elif expect is SplitKind.SPLIT:
                        if abs(out.d1 + out.d2 - tree.length(q1, q2)) > 1e-10:
                            violations.append(("split identity", q1, q2, int(m)))
                        if abs(out.d1 - nodes[where[q1], true_c]) > 1e-10:
                            violations.append(("split length", q1, q2, int(m)))
        for m in np.flatnonzero(S.valid):
            tup = S[int(m)]
            if tree.inserted[m] or not tree.has_edge(tup.p1, tup.p2):
                violations.append(("candidate hygiene", int(m)))

    try:
        topo = fast_hgt(dm, dmin, observer=observer, check_invariants=True).to_topology()
    except (HgtFailure, AssertionError) as exc:
        violations.append(("run", str(exc)))
        return violations
    if rf_distance(suppress_root(t), topo) != 0:
        violations.append(("topology",))
    return violations


def test_criterion_5_structural_invariants(report):
    model = EvoModel(4, 0.05, 0.2)
    dmin = default_delta_min(4, model.f)
    runs = 0
    violations = []
    for n in range(3, 13):
        for shape in ("uniform", "yule_harding", "caterpillar", "balanced"):
            for rep in range(3 if shape in ("uniform", "yule_harding") else 1):
                t = gen_tree(n, shape, model, seed=trial_seed(500 + n, rep))
                violations += _structural_violations(t, dmin)
                runs += 1
    report(5, "structural invariants", not violations,
           f"{runs} trees with n <= 12, {len(violations)} violations {violations[:3]}")


def test_criterion_6_degenerate_handling(report):
    checks = {}
    cl = np.full((5, 5), -0.1)
    np.fill_diagonal(cl, 1.0)
    try:
        fast_hgt(DistanceMatrix([f"s{i}" for i in range(5)], cl), 0.01)
        checks["all-Inf -> F2"] = False
    except HgtFailure as exc:
        checks["all-Inf -> F2"] = exc.line == "F2"

    t = gen_tree(3, "uniform", EvoModel(4, 0.05, 0.1), seed=0)
    recon = fast_hgt(exact_distance_matrix(t), 0.01)
    topo = recon.to_topology()
    checks["n=3 -> star"] = (
        len(topo.edges) == 3 and recon.n_nodes == 4 and max_length_error(suppress_root(t), topo) < 1e-12
    )

    s = SequenceSet.from_strings(["a", "b", "c"], ["AAAA", "CCCC", "AAAC"], "ACGT")
    dm = distance_matrix_from_sequences(s)
    buf = io.StringIO()
    write_phylip(dm, buf)
    first = buf.getvalue().splitlines()[1].split()
    checks["non-positive closeness -> Inf"] = (
        dm.closeness[0, 1] <= 0 and math.isinf(dm.distance(0, 1)) and first[2] == "Inf"
    )
    report(6, "degenerate handling", all(checks.values()),
           ", ".join(f"{k}: {'ok' if v else 'BROKEN'}" for k, v in checks.items()))
