"""Fast Harmonic Greedy Triplets reconstruction.

The engine grows an unrooted tree one leaf at a time.  Every internal node
remembers the three leaves whose triplet created it (its *def* set); a
leaf's def set is itself.  For every leaf ``M`` not yet in the tree the
candidate array keeps the best known *splitting tuple*: an edge, a triplet
``M X Y`` whose center falls strictly inside that edge, and the three edge
lengths the insertion would create.  Each iteration inserts the leaf whose
candidate triplet has the largest harmonic closeness, drops candidates that
referred to the edge just split, and rescans only the three new edges.

Only the distance matrix and ``delta_min`` drive the algorithm.  The
threshold and sample-length helpers are analytic companions used for
diagnostics and for choosing simulation lengths.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distmat import DistanceMatrix, center_leg, is_positive
from .treecore import WeightedTopology

__all__ = [
    "HgtParams",
    "Thresholds",
    "thresholds",
    "sample_length",
    "sample_length_terms",
    "default_delta_min",
    "HgtFailure",
    "RelevanceError",
    "ReconTree",
    "EdgeSides",
    "edge_side_leaves",
    "SplitKind",
    "SplitOutcome",
    "SplittingTuple",
    "CandidateArray",
    "init_triplet",
    "est_node_leg",
    "split_edge",
    "update_S",
    "fast_hgt",
]

_SQRT2 = math.sqrt(2.0)
_CLG_CONST = (3 * _SQRT2 / 2) * ((_SQRT2 - 1) / (_SQRT2 + 1)) ** 2


# ---------------------------------------------------------------------------
# analytic parameters
# ---------------------------------------------------------------------------


def _alpha(m: int) -> float:
    if m < 2:
        raise ValueError("alphabet size m must be at least 2")
    return m / (m - 1)


def default_delta_min(m: int, f: float, c: float = 0.25) -> float:
    """``c * (-ln(1 - alpha f))``; ``c`` must lie in (0, 1/2)."""
    if not 0 < c < 0.5:
        raise ValueError("c must lie strictly between 0 and 1/2")
    a = _alpha(m)
    if not 0 < a * f < 1:
        raise ValueError("need 0 < alpha f < 1")
    return -c * math.log1p(-a * f)


@dataclass(frozen=True)
class HgtParams:
    """Separation threshold plus optional model knowledge."""

    delta_min: float
    m: int | None = None
    f: float | None = None
    g: float | None = None

    def __post_init__(self):
        if not self.delta_min > 0:
            raise ValueError("delta_min must be positive")
        if self.f is not None:
            if self.m is None:
                raise ValueError("m is required when f is given")
            bound = -math.log1p(-_alpha(self.m) * self.f) / 2
            if not self.delta_min < bound:
                raise ValueError(f"delta_min must be below {bound:.6g} for f={self.f}")

    @property
    def c(self) -> float | None:
        if self.f is None:
            return None
        return self.delta_min / -math.log1p(-_alpha(self.m) * self.f)

    @classmethod
    def from_model(cls, m: int, f: float, g: float | None = None, c: float = 0.25) -> "HgtParams":
        return cls(default_delta_min(m, f, c), m=m, f=f, g=g)


@dataclass(frozen=True)
class Thresholds:
    c_lg: float
    c_sm: float
    c_md: float


def thresholds(m: int, g: float, d: int) -> Thresholds:
    """Large / small / middle triplet-closeness thresholds for g-depth ``d``."""
    a = _alpha(m)
    if a * g >= 1:
        raise ValueError("need alpha g < 1")
    if d < 1:
        raise ValueError("g-depth must be at least 1")
    c_lg = _CLG_CONST * (1 - a * g) ** (2 * d + 4)
    c_sm = c_lg / _SQRT2
    return Thresholds(c_lg, c_sm, (c_lg + c_sm) / 2)


@dataclass(frozen=True)
class SampleLength:
    ell: int
    ell_g: float
    ell_c: float
    c_lg: float
    c: float
    d: int


def sample_length_terms(n, delta, m, f, g, d, delta_min) -> SampleLength:
    """Both sequence-length requirements and their rounded-up maximum.

    ``ell_g`` keeps every large triplet ahead of every small one;
    ``ell_c`` keeps every non-small triplet's center estimates within
    ``delta_min / 2``.  Each side is allotted failure probability
    ``delta / 2``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n < 3:
        raise ValueError("n must be at least 3")
    if not 0 < f <= g < 1 - 1 / m:
        raise ValueError("need 0 < f <= g < 1 - 1/m")
    params = HgtParams(delta_min, m=m, f=f, g=g)
    a = _alpha(m)
    c_lg = thresholds(m, g, d).c_lg
    c = params.c
    ell_g = 210 * a**2 * (3 * math.log(n) + math.log(3 / delta)) / c_lg**2
    ell_c = 81 * (3 * math.log(n) + math.log(7 / delta)) / (c_lg**2 * f**2 * c**2)
    return SampleLength(math.ceil(max(ell_g, ell_c)), ell_g, ell_c, c_lg, c, d)


def sample_length(n, delta, m, f, g, d, delta_min) -> int:
    return sample_length_terms(n, delta, m, f, g, d, delta_min).ell


# ---------------------------------------------------------------------------
# reconstruction state
# ---------------------------------------------------------------------------


class HgtFailure(Exception):
    """The greedy loop cannot continue.

    ``line`` is ``"F2"`` (no positive initial triplet) or ``"F8"`` (no leaf
    has a splitting tuple); ``iteration`` counts completed insertions and
    ``inserted`` is the number of leaves in the partial tree.
    """

    def __init__(self, line: str, iteration: int, inserted: int, reason: str = ""):
        self.line = line
        self.iteration = iteration
        self.inserted = inserted
        self.reason = reason
        super().__init__(f"{line} failure at iteration {iteration} ({inserted} leaves inserted){': ' + reason if reason else ''}")


class RelevanceError(AssertionError):
    """A triplet handed to the splitter is not relevant for the edge."""


class ReconTree:
    """Partial reconstruction: adjacency with lengths and def sets.

    Leaves keep their leaf index as node id; internal nodes are numbered
    ``n, n+1, ...`` in creation order.
    """

    def __init__(self, names):
        self.names = tuple(names)
        n = len(self.names)
        self.n = n
        self.adj: list[dict[int, float]] = [dict() for _ in range(n)]
        self.defs: list[tuple[int, ...]] = [(i,) for i in range(n)]
        self.inserted = np.zeros(n, dtype=bool)
        self.stats: RunStats | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.adj)

    @property
    def n_inserted(self) -> int:
        return int(self.inserted.sum())

    def is_leaf(self, v: int) -> bool:
        return v < self.n

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adj[u]

    def length(self, u: int, v: int) -> float:
        return self.adj[u][v]

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n_nodes) for v in self.adj[u] if u < v]

    def _new_internal(self, defs) -> int:
        self.adj.append({})
        self.defs.append(tuple(defs))
        return len(self.adj) - 1

    def _link(self, u, v, length):
        self.adj[u][v] = length
        self.adj[v][u] = length

    def make_star(self, a, b, c, la, lb, lc) -> int:
        d = self._new_internal((a, b, c))
        for leaf, length in ((a, la), (b, lb), (c, lc)):
            self._link(leaf, d, length)
            self.inserted[leaf] = True
        return d

    def insert(self, p1, p2, leaf, defs, d1, d2, d_np) -> int:
        """Subdivide edge ``p1 p2`` with a new node and hang ``leaf`` off it."""
        del self.adj[p1][p2]
        del self.adj[p2][p1]
        p = self._new_internal(defs)
        self._link(p1, p, d1)
        self._link(p2, p, d2)
        self._link(leaf, p, d_np)
        self.inserted[leaf] = True
        return p

    def to_topology(self) -> WeightedTopology:
        if not self.inserted.all():
            raise ValueError("reconstruction is incomplete")
        edges = self.edges()
        return WeightedTopology(self.names, tuple(edges), np.array([self.adj[u][v] for u, v in edges]))

    def path(self, u: int, v: int) -> list[int]:
        prev = {u: -1}
        queue = deque([u])
        while queue:
            w = queue.popleft()
            if w == v:
                break
            for x in self.adj[w]:
                if x not in prev:
                    prev[x] = w
                    queue.append(x)
        out = [v]
        while out[-1] != u:
            out.append(prev[out[-1]])
        return out[::-1]


@dataclass
class RunStats:
    iterations: int = 0
    split_edge_calls: int = 0
    update_calls: int = 0
    peak_live_tuples: int = 0
    peak_nodes: int = 0
    init_triplet: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class EdgeSides:
    """Which nodes lie on ``q1``'s side of edge ``q1 q2``."""

    q1: int
    q2: int
    q1_side: np.ndarray

    def on_q1_side(self, v: int) -> bool:
        return bool(self.q1_side[v])

    def on_q2_side(self, v: int) -> bool:
        return not self.q1_side[v]

    def on_path(self, x: int, y: int) -> bool:
        """Is the edge on the tree path between nodes ``x`` and ``y``?"""
        return bool(self.q1_side[x] != self.q1_side[y])


def edge_side_leaves(tree: ReconTree, q1: int, q2: int) -> EdgeSides:
    """One traversal from ``q1`` that never crosses edge ``q1 q2``."""
    if not tree.has_edge(q1, q2):
        raise KeyError(f"{q1}-{q2} is not an edge")
    mark = np.zeros(tree.n_nodes, dtype=bool)
    mark[q1] = True
    stack = [q1]
    while stack:
        v = stack.pop()
        for u in tree.adj[v]:
            if not mark[u] and not (v == q1 and u == q2):
                mark[u] = True
                stack.append(u)
    return EdgeSides(q1, q2, mark)


def est_node_leg(xi: int, pi: int, tree: ReconTree, dm: DistanceMatrix) -> float:
    """Estimated distance from leaf ``xi`` to tree node ``pi``.

    Zero when ``pi`` is a leaf (it is then ``xi`` itself); otherwise the
    center leg of ``xi`` in the triplet ``def(pi)``.
    """
    defs = tree.defs[pi]
    if xi not in defs:
        raise ValueError(f"leaf {xi} is not in def({pi}) = {defs}")
    if tree.is_leaf(pi):
        return 0.0
    b, c = (v for v in defs if v != xi)
    d = dm.distances
    return center_leg(d[xi, b], d[xi, c], d[b, c])


class SplitKind(enum.Enum):
    TOO_CLOSE = "too close"
    OUTSIDE = "outside this edge"
    SPLIT = "split"


@dataclass(frozen=True)
class SplitOutcome:
    kind: SplitKind
    d1: float | None = None
    d2: float | None = None
    d_np: float | None = None


TOO_CLOSE = SplitOutcome(SplitKind.TOO_CLOSE)
OUTSIDE = SplitOutcome(SplitKind.OUTSIDE)


def _pick(x, y, defs):
    return x if x in defs else y


def split_edge(
    tree: ReconTree,
    p1: int,
    p2: int,
    n: int,
    x: int,
    y: int,
    dm: DistanceMatrix,
    delta_min: float,
    sides: EdgeSides | None = None,
) -> SplitOutcome:
    """Decide whether the center of ``n x y`` lies strictly inside edge ``p1 p2``.

    The triplet must be relevant: positive, ``n`` outside the tree,
    ``x in def(p1)``, ``y in def(p2)`` and the edge on the tree path from
    ``x`` to ``y``.
    """
    if sides is None or sides.q1 != p1 or sides.q2 != p2:
        sides = edge_side_leaves(tree, p1, p2)
    c = dm.closeness
    if tree.inserted[n] or x == y or n in (x, y):
        raise RelevanceError(f"{n}{x}{y}: bad leaf roles")
    if x not in tree.defs[p1] or y not in tree.defs[p2]:
        raise RelevanceError(f"{x} not in def({p1}) or {y} not in def({p2})")
    if not is_positive(c[n, x], c[n, y], c[x, y]):
        raise RelevanceError(f"triplet {n}{x}{y} is not positive")
    if not sides.on_path(x, y):
        raise RelevanceError(f"edge {p1}-{p2} is not on the path {x}..{y}")

    d = dm.distances
    legs = {
        x: center_leg(d[x, y], d[x, n], d[y, n]),
        y: center_leg(d[x, y], d[y, n], d[x, n]),
        n: center_leg(d[n, x], d[n, y], d[x, y]),
    }
    x1 = _pick(x, y, tree.defs[p1])
    x2 = _pick(x, y, tree.defs[p2])
    delta1 = legs[x1] - est_node_leg(x1, p1, tree, dm)
    delta2 = legs[x2] - est_node_leg(x2, p2, tree, dm)
    if abs(delta1) < delta_min or abs(delta2) < delta_min:
        return TOO_CLOSE
    # p2 lies between p1 and x1 exactly when x1 sits on p2's side
    d1p = -delta1 if sides.on_q2_side(x1) else delta1
    d2p = -delta2 if sides.on_q1_side(x2) else delta2
    length = tree.length(p1, p2)
    dd1 = (d1p + length - d2p) / 2
    dd2 = (d2p + length - d1p) / 2
    if dd1 >= length or dd2 >= length:
        return OUTSIDE
    return SplitOutcome(SplitKind.SPLIT, dd1, dd2, legs[n])


@dataclass(frozen=True)
class SplittingTuple:
    p1: int
    p2: int
    n: int
    x: int
    y: int
    d1: float
    d2: float
    d_np: float
    closeness: float


class CandidateArray:
    """Best splitting tuple per leaf, stored column-wise.

    An empty slot has closeness 0, which every real candidate (a positive
    triplet) beats.
    """

    def __init__(self, n: int):
        self.n = n
        self.valid = np.zeros(n, dtype=bool)
        self.score = np.zeros(n)
        self.ends = np.full((n, 2), -1, dtype=np.int64)
        self.xy = np.full((n, 2), -1, dtype=np.int64)
        self.lengths = np.zeros((n, 3))

    def __getitem__(self, m: int) -> SplittingTuple | None:
        if not self.valid[m]:
            return None
        p1, p2 = (int(v) for v in self.ends[m])
        x, y = (int(v) for v in self.xy[m])
        d1, d2, dnp = (float(v) for v in self.lengths[m])
        return SplittingTuple(p1, p2, int(m), x, y, d1, d2, dnp, float(self.score[m]))

    def live(self) -> int:
        return int(self.valid.sum())

    def clear(self, mask):
        self.valid[mask] = False
        self.score[mask] = 0.0

    def referencing(self, u: int, v: int) -> np.ndarray:
        e = self.ends
        return self.valid & (((e[:, 0] == u) & (e[:, 1] == v)) | ((e[:, 0] == v) & (e[:, 1] == u)))

    def best(self) -> int | None:
        """Leaf with the largest candidate closeness; smallest index on ties."""
        if not self.valid.any():
            return None
        scores = np.where(self.valid, self.score, -np.inf)
        return int(np.argmax(scores))


def init_triplet(a: int, dm: DistanceMatrix) -> tuple[int, int, int]:
    """Positive triplet ``a b c`` with the largest harmonic closeness.

    Ties go to the lexicographically smallest ``(b, c)``.  Raises
    :class:`HgtFailure` (line F2) when no triplet containing ``a`` is
    positive.
    """
    n = dm.n
    if n < 3:
        raise ValueError("need at least three leaves")
    c = dm.closeness
    others = np.array([v for v in range(n) if v != a])
    ca = c[a, others]
    best, best_bc = -np.inf, None
    with np.errstate(divide="ignore"):
        inv_a = np.where(ca > 0, 1.0 / np.where(ca > 0, ca, 1.0), np.inf)
        for i in range(len(others) - 1):
            b = others[i]
            rest = others[i + 1 :]
            cbc = c[b, rest]
            ok = (cbc > 0) & np.isfinite(inv_a[i + 1 :]) & np.isfinite(inv_a[i])
            if not ok.any():
                continue
            inv_bc = 1.0 / np.where(ok, cbc, 1.0)
            h = np.where(ok, 3.0 / (inv_a[i] + inv_a[i + 1 :] + inv_bc), -np.inf)
            j = int(np.argmax(h))
            if h[j] > best:
                best, best_bc = h[j], (int(b), int(rest[j]))
    if best_bc is None:
        raise HgtFailure("F2", 0, 0, f"no positive triplet contains leaf {a}")
    return (a, *best_bc)


def _relevant_pairs(tree: ReconTree, sides: EdgeSides) -> list[tuple[int, int]]:
    q1, q2 = sides.q1, sides.q2
    pairs = []
    for x in sorted(tree.defs[q1]):
        for y in sorted(tree.defs[q2]):
            if x != y and sides.on_q1_side(x) and sides.on_q2_side(y):
                pairs.append((x, y))
    return pairs


def update_S(
    tree: ReconTree,
    q1: int,
    q2: int,
    S: CandidateArray,
    dm: DistanceMatrix,
    outside: np.ndarray,
    delta_min: float,
    stats: RunStats | None = None,
):
    """Offer every splitting tuple on edge ``q1 q2`` to the candidate array.

    ``outside`` lists the leaves not yet in the tree (ascending).  For each
    relevant ``(x, y)`` pair (at most nine) the splitter runs on all outside
    leaves at once; a slot is replaced only by a strictly larger closeness.
    """
    sides = edge_side_leaves(tree, q1, q2)
    if stats is not None:
        stats.update_calls += 1
    if outside.size == 0:
        return
    c, d = dm.closeness, dm.distances
    length = tree.length(q1, q2)
    for x, y in _relevant_pairs(tree, sides):
        c_xy = c[x, y]
        if not c_xy > 0:
            continue
        c_mx, c_my = c[outside, x], c[outside, y]
        pos = (c_mx > 0) & (c_my > 0)
        if not pos.any():
            continue
        ms = outside[pos]
        c_mx, c_my = c_mx[pos], c_my[pos]
        if stats is not None:
            stats.split_edge_calls += len(ms)
        d_mx, d_my, d_xy = d[ms, x], d[ms, y], d[x, y]
        leg = {
            x: (d_xy + d_mx - d_my) / 2,
            y: (d_xy + d_my - d_mx) / 2,
        }
        leg_n = (d_mx + d_my - d_xy) / 2
        x1 = _pick(x, y, tree.defs[q1])
        x2 = _pick(x, y, tree.defs[q2])
        delta1 = leg[x1] - est_node_leg(x1, q1, tree, dm)
        delta2 = leg[x2] - est_node_leg(x2, q2, tree, dm)
        apart = (np.abs(delta1) >= delta_min) & (np.abs(delta2) >= delta_min)
        d1p = -delta1 if sides.on_q2_side(x1) else delta1
        d2p = -delta2 if sides.on_q1_side(x2) else delta2
        dd1 = (d1p + length - d2p) / 2
        dd2 = (d2p + length - d1p) / 2
        split = apart & (dd1 < length) & (dd2 < length)
        if not split.any():
            continue
        score = 3.0 / (1.0 / c_mx + 1.0 / c_my + 1.0 / c_xy)
        better = split & (score > S.score[ms])
        if not better.any():
            continue
        idx = ms[better]
        S.valid[idx] = True
        S.score[idx] = score[better]
        S.ends[idx] = (q1, q2)
        S.xy[idx] = (x, y)
        S.lengths[idx, 0] = dd1[better]
        S.lengths[idx, 1] = dd2[better]
        S.lengths[idx, 2] = leg_n[better]


def _check_state(tree: ReconTree, S: CandidateArray):
    for u, v in tree.edges():
        if not set(tree.defs[u]) & set(tree.defs[v]):
            raise AssertionError(f"edge {u}-{v} has disjoint def sets")
    for m in np.flatnonzero(S.valid):
        p1, p2 = S.ends[m]
        if tree.inserted[m]:
            raise AssertionError(f"candidate for inserted leaf {m}")
        if not tree.has_edge(int(p1), int(p2)):
            raise AssertionError(f"candidate for leaf {m} references dead edge {p1}-{p2}")


def fast_hgt(
    dm: DistanceMatrix,
    delta_min: float,
    *,
    start_leaf: int = 0,
    observer: Callable[[ReconTree, CandidateArray, int], None] | None = None,
    check_invariants: bool = False,
) -> ReconTree:
    """Reconstruct an unrooted weighted topology from a distance matrix.

    Returns the completed :class:`ReconTree`; its ``stats`` attribute holds
    work counters.  Raises :class:`HgtFailure` when no positive initial
    triplet exists (F2) or the candidate array runs dry (F8).

    ``observer(tree, S, k)`` is called once the tree has ``k`` leaves, for
    every ``k`` from 3 to ``n``.
    """
    n = dm.n
    if n < 3:
        raise ValueError("need at least three leaves")
    if not delta_min > 0:
        raise ValueError("delta_min must be positive")
    stats = RunStats()
    tree = ReconTree(dm.names)
    tree.stats = stats

    a, b, c = init_triplet(start_leaf, dm)
    stats.init_triplet = (a, b, c)
    d = dm.distances
    center = tree.make_star(
        a, b, c,
        center_leg(d[a, b], d[a, c], d[b, c]),
        center_leg(d[b, a], d[b, c], d[a, c]),
        center_leg(d[c, a], d[c, b], d[a, b]),
    )
    S = CandidateArray(n)
    outside = np.flatnonzero(~tree.inserted)
    for leaf in (a, b, c):
        update_S(tree, leaf, center, S, dm, outside, delta_min, stats)
    stats.peak_live_tuples = S.live()
    stats.peak_nodes = tree.n_nodes
    if check_invariants:
        _check_state(tree, S)
    if observer is not None:
        observer(tree, S, 3)

    while not tree.inserted.all():
        k = tree.n_inserted
        best = S.best()
        if best is None:
            raise HgtFailure("F8", stats.iterations, k, "no leaf has a splitting tuple")
        t = S[best]
        p = tree.insert(t.p1, t.p2, t.n, (t.n, t.x, t.y), t.d1, t.d2, t.d_np)
        S.clear(S.referencing(t.p1, t.p2))
        S.clear(np.array([t.n]))
        outside = np.flatnonzero(~tree.inserted)
        for q1, q2 in ((t.p1, p), (t.p2, p), (t.n, p)):
            update_S(tree, q1, q2, S, dm, outside, delta_min, stats)
        stats.iterations += 1
        stats.peak_live_tuples = max(stats.peak_live_tuples, S.live())
        stats.peak_nodes = max(stats.peak_nodes, tree.n_nodes)
        if check_invariants:
            _check_state(tree, S)
        if observer is not None:
            observer(tree, S, k + 1)
    return tree
