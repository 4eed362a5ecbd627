"""Leaf-labelled tree structures shared by the simulator and the reconstructor.

Two tree types live here:

``RootedEvoTree``
    Rooted binary tree with a mutation probability on every edge.  This is
    the generating model for simulations.

``WeightedTopology``
    Unrooted binary tree with an additive length on every edge.  Both the
    ground truth (obtained with :func:`suppress_root`) and reconstructions
    are expressed this way.

Node numbering follows one convention everywhere: leaves are nodes
``0 .. n-1`` and the leaf index doubles as the node id; internal nodes come
after.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RootedEvoTree",
    "WeightedTopology",
    "NewickError",
    "suppress_root",
    "bipartitions",
    "induced_bipartitions",
    "rf_distance",
    "topology_matches",
    "g_depth",
    "split_lengths",
    "max_length_error",
    "parse_newick",
    "serialize_newick",
]


def _check_names(names: Sequence[str]) -> tuple[str, ...]:
    names = tuple(str(s) for s in names)
    if any(not s for s in names):
        raise ValueError("leaf names must be nonempty")
    if len(set(names)) != len(names):
        raise ValueError("leaf names must be unique")
    return names


@dataclass(frozen=True, eq=False)
class RootedEvoTree:
    """Rooted binary tree carrying per-edge mutation probabilities.

    Parameters
    ----------
    names : sequence of str
        Leaf labels; ``names[i]`` is the label of leaf node ``i``.
    parent : sequence of int
        ``parent[v]`` for every node, ``-1`` for the root.  Nodes
        ``0 .. n-1`` must be the leaves.
    edge_prob : sequence of float
        Mutation probability of the edge from ``v`` to its parent
        (ignored for the root, stored as NaN).
    m : int
        Alphabet size of the substitution model the probabilities refer to.
    """

    names: tuple[str, ...]
    parent: np.ndarray
    edge_prob: np.ndarray
    m: int = 4
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    root: int = field(init=False)

    def __post_init__(self):
        names = _check_names(self.names)
        parent = np.asarray(self.parent, dtype=np.int64).copy()
        prob = np.asarray(self.edge_prob, dtype=float).copy()
        n = len(names)
        if n < 2:
            raise ValueError("a rooted tree needs at least two leaves")
        if parent.shape != (2 * n - 1,) or prob.shape != parent.shape:
            raise ValueError(f"expected {2 * n - 1} nodes for {n} leaves")
        if self.m < 2:
            raise ValueError("alphabet size m must be at least 2")
        roots = np.flatnonzero(parent < 0)
        if len(roots) != 1:
            raise ValueError("exactly one root required")
        root = int(roots[0])
        kids: list[list[int]] = [[] for _ in range(2 * n - 1)]
        for v, p in enumerate(parent):
            if p >= 0:
                if not 0 <= p < 2 * n - 1:
                    raise ValueError(f"parent of node {v} out of range")
                kids[p].append(v)
        for v in range(2 * n - 1):
            want = 0 if v < n else 2
            if len(kids[v]) != want:
                raise ValueError(f"node {v} has {len(kids[v])} children, expected {want}")
        # reachability doubles as the cycle check
        seen = 0
        stack = [root]
        while stack:
            v = stack.pop()
            seen += 1
            stack.extend(kids[v])
        if seen != 2 * n - 1:
            raise ValueError("parent array does not describe a single tree")
        prob[root] = np.nan
        edge = np.delete(prob, root)
        if np.any(~np.isfinite(edge)) or np.any(edge < 0) or np.any(edge >= 1):
            raise ValueError("edge probabilities must lie in [0, 1)")
        parent.setflags(write=False)
        prob.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "edge_prob", prob)
        object.__setattr__(self, "children", tuple(tuple(k) for k in kids))
        object.__setattr__(self, "root", root)

    @property
    def n_leaves(self) -> int:
        return len(self.names)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def alpha(self) -> float:
        return self.m / (self.m - 1)

    def is_leaf(self, v: int) -> bool:
        return v < self.n_leaves

    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs, one per edge."""
        return [(int(p), v) for v, p in enumerate(self.parent) if p >= 0]

    def edge_length(self, v: int) -> float:
        """Additive length ``-ln(1 - alpha p)`` of the edge above ``v``."""
        return -math.log1p(-self.alpha * self.edge_prob[v])

    def preorder(self) -> list[int]:
        order, stack = [], [self.root]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(reversed(self.children[v]))
        return order

    def leaves_below(self, v: int) -> list[int]:
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            if u < self.n_leaves:
                out.append(u)
            else:
                stack.extend(self.children[u])
        return sorted(out)

    def leaf_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown leaf {name!r}") from None


@dataclass(frozen=True, eq=False)
class WeightedTopology:
    """Unrooted binary tree with positive edge lengths.

    ``edges[k] = (u, v)`` has length ``lengths[k]`` and optional weight
    ``weights[k]``.  Leaves are nodes ``0 .. n-1``; internal nodes are
    ``n .. 2n-3`` and have degree three.
    """

    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    lengths: np.ndarray
    weights: np.ndarray | None = None
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        names = _check_names(self.names)
        n = len(names)
        if n < 3:
            raise ValueError("an unrooted binary topology needs at least three leaves")
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        lengths = np.asarray(self.lengths, dtype=float).copy()
        if len(edges) != 2 * n - 3 or lengths.shape != (len(edges),):
            raise ValueError(f"expected {2 * n - 3} edges for {n} leaves")
        if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
            raise ValueError("edge lengths must be finite and positive")
        n_nodes = 2 * n - 2
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
        for k, (u, v) in enumerate(edges):
            if not (0 <= u < n_nodes and 0 <= v < n_nodes) or u == v:
                raise ValueError(f"bad edge {(u, v)}")
            adj[u].append((v, k))
            adj[v].append((u, k))
        for v in range(n_nodes):
            want = 1 if v < n else 3
            if len(adj[v]) != want:
                raise ValueError(f"node {v} has degree {len(adj[v])}, expected {want}")
        if len(_bfs_order(adj, 0)) != n_nodes:
            raise ValueError("edges do not form a connected tree")
        weights = self.weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float).copy()
            if weights.shape != lengths.shape:
                raise ValueError("weights must match lengths")
            weights.setflags(write=False)
        lengths.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "adjacency", tuple(tuple(a) for a in adj))

    @property
    def n_leaves(self) -> int:
        return len(self.names)

    @property
    def n_nodes(self) -> int:
        return 2 * self.n_leaves - 2

    def neighbors(self, v: int) -> list[int]:
        return [u for u, _ in self.adjacency[v]]

    def edge_index(self, u: int, v: int) -> int:
        for w, k in self.adjacency[u]:
            if w == v:
                return k
        raise KeyError(f"no edge between {u} and {v}")

    def length(self, u: int, v: int) -> float:
        return float(self.lengths[self.edge_index(u, v)])

    def path_distances(self, source: int) -> np.ndarray:
        """Additive distance from ``source`` to every node."""
        dist = np.full(self.n_nodes, np.nan)
        dist[source] = 0.0
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for u, k in self.adjacency[v]:
                if np.isnan(dist[u]):
                    dist[u] = dist[v] + self.lengths[k]
                    queue.append(u)
        return dist

    def leaf_distance_matrix(self) -> np.ndarray:
        n = self.n_leaves
        return np.vstack([self.path_distances(i)[:n] for i in range(n)])


def _bfs_order(adj, start):
    seen = {start}
    order = [start]
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for u, _ in adj[v]:
            if u not in seen:
                seen.add(u)
                order.append(u)
                queue.append(u)
    return order


def suppress_root(t: RootedEvoTree) -> WeightedTopology:
    """Unrooted weighted topology of ``t``.

    The two root edges are merged into one edge whose weight is
    ``1 - (1 - p1)(1 - p2)`` and whose length is the sum of the two lengths.
    All other edges keep weight ``p_e`` and length ``-ln(1 - alpha p_e)``.
    """
    n = t.n_leaves
    if n < 3:
        raise ValueError("root suppression needs at least three leaves")
    # internal non-root nodes are renumbered densely from n
    relabel = {v: v for v in range(n)}
    nxt = n
    for v in range(n, t.n_nodes):
        if v != t.root:
            relabel[v] = nxt
            nxt += 1
    edges, lengths, weights = [], [], []
    for p, v in t.edges():
        if p == t.root:
            continue
        edges.append((relabel[p], relabel[v]))
        lengths.append(t.edge_length(v))
        weights.append(float(t.edge_prob[v]))
    c1, c2 = t.children[t.root]
    edges.append((relabel[c1], relabel[c2]))
    lengths.append(t.edge_length(c1) + t.edge_length(c2))
    weights.append(1.0 - (1.0 - t.edge_prob[c1]) * (1.0 - t.edge_prob[c2]))
    return WeightedTopology(t.names, tuple(edges), np.array(lengths), np.array(weights))


def suppress_root_node_map(t: RootedEvoTree) -> dict[int, int]:
    """Node-id map used by :func:`suppress_root` (root omitted)."""
    out = {v: v for v in range(t.n_leaves)}
    nxt = t.n_leaves
    for v in range(t.n_leaves, t.n_nodes):
        if v != t.root:
            out[v] = nxt
            nxt += 1
    return out


def bipartitions(t: WeightedTopology) -> frozenset[int]:
    """Nontrivial splits of ``t`` as leaf bitmasks.

    Each split is encoded by the side that does not contain leaf 0, as an
    integer whose bit ``i`` is set when leaf ``i`` is on that side.
    """
    n = t.n_leaves
    order = _bfs_order(t.adjacency, 0)
    parent = {0: -1}
    for v in order:
        for u, _ in t.adjacency[v]:
            if u not in parent:
                parent[u] = v
    mask = [0] * t.n_nodes
    out = set()
    for v in reversed(order):
        if v < n:
            mask[v] |= 1 << v
        p = parent[v]
        if p >= 0:
            mask[p] |= mask[v]
            if v >= n and p >= n:
                out.add(mask[v])
    return frozenset(out)


def _aligned(t1: WeightedTopology, t2: WeightedTopology) -> frozenset[int]:
    """Splits of ``t2`` re-expressed in ``t1``'s leaf numbering."""
    if set(t1.names) != set(t2.names) or len(t1.names) != len(t2.names):
        raise ValueError("trees have different leaf sets")
    if t1.names == t2.names:
        return bipartitions(t2)
    pos = [t1.names.index(s) for s in t2.names]
    full = (1 << t1.n_leaves) - 1
    out = set()
    for b in bipartitions(t2):
        m = 0
        i = 0
        while b:
            if b & 1:
                m |= 1 << pos[i]
            b >>= 1
            i += 1
        if m & 1:
            m = full ^ m
        out.add(m)
    return frozenset(out)


def induced_bipartitions(t: WeightedTopology, leaves: Iterable[int]) -> frozenset[int]:
    """Splits of ``t`` restricted to a leaf subset, degenerate ones dropped.

    These are exactly the splits of the subtree spanned by ``leaves`` with
    branchless paths contracted, encoded relative to the smallest leaf of
    the subset (that leaf's side is the one dropped).
    """
    sub = 0
    for i in leaves:
        sub |= 1 << i
    if bin(sub).count("1") < 4:
        return frozenset()
    anchor = sub & -sub
    out = set()
    for b in bipartitions(t):
        r = b & sub
        if r & anchor:
            r = sub ^ r
        size = bin(r).count("1")
        if 2 <= size <= bin(sub).count("1") - 2:
            out.add(r)
    return frozenset(out)


def rf_distance(t1: WeightedTopology, t2: WeightedTopology) -> int:
    """Robinson-Foulds distance: size of the symmetric difference of splits."""
    return len(bipartitions(t1) ^ _aligned(t1, t2))


def topology_matches(t1: WeightedTopology, t2: WeightedTopology) -> bool:
    return rf_distance(t1, t2) == 0


def split_lengths(t: WeightedTopology) -> dict[int, float]:
    """Edge length keyed by split bitmask, pendant edges included.

    Masks use the same encoding as :func:`bipartitions` (side without
    leaf 0); the pendant edge of leaf 0 is keyed by the complement of
    ``1``.
    """
    n = t.n_leaves
    order = _bfs_order(t.adjacency, 0)
    parent = {0: (-1, -1)}
    for v in order:
        for u, k in t.adjacency[v]:
            if u not in parent:
                parent[u] = (v, k)
    mask = [0] * t.n_nodes
    out = {}
    for v in reversed(order):
        if v < n:
            mask[v] |= 1 << v
        p, k = parent[v]
        if p >= 0:
            mask[p] |= mask[v]
            out[mask[v]] = float(t.lengths[k])
    return out


def max_length_error(truth: WeightedTopology, other: WeightedTopology) -> float:
    """Largest ``|length difference|`` over edges present in both trees."""
    a = split_lengths(truth)
    if truth.names == other.names:
        b = split_lengths(other)
    else:
        pos = [truth.names.index(s) for s in other.names]
        full = (1 << truth.n_leaves) - 1
        b = {}
        for mask, length in split_lengths(other).items():
            r = 0
            for i, j in enumerate(pos):
                if mask >> i & 1:
                    r |= 1 << j
            if r & 1:
                r = full ^ r
            b[r] = length
    common = a.keys() & b.keys()
    if not common:
        raise ValueError("trees share no edges")
    return max(abs(a[s] - b[s]) for s in common)


def g_depth(t: RootedEvoTree) -> int:
    """Largest edge g-depth of the rooted tree.

    Cutting edge ``(p, v)`` leaves two components; the edge's g-depth is the
    larger of the two endpoints' distances (in edges) to their nearest leaf
    inside their own component.
    """
    n = t.n_leaves
    down = np.zeros(t.n_nodes, dtype=np.int64)
    order = t.preorder()
    for v in reversed(order):
        if v >= n:
            down[v] = 1 + min(down[c] for c in t.children[v])
    up = np.full(t.n_nodes, np.iinfo(np.int64).max // 4, dtype=np.int64)
    for v in order:
        if v < n:
            continue
        a, b = t.children[v]
        up[a] = 1 + min(up[v], 1 + down[b])
        up[b] = 1 + min(up[v], 1 + down[a])
    best = 0
    for p, v in t.edges():
        (sib,) = [c for c in t.children[p] if c != v]
        upper = min(int(up[p]), 1 + int(down[sib]))
        best = max(best, int(down[v]), upper)
    return best


# ---------------------------------------------------------------------------
# Newick
# ---------------------------------------------------------------------------


class NewickError(ValueError):
    """Malformed Newick text; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


_META = re.compile(r"\[&([^\]]*)\]")
_LABEL = re.compile(r"[^\s(),:;\[\]']+")
_NUMBER = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


class _Node:
    __slots__ = ("name", "length", "children", "pos")

    def __init__(self, pos):
        self.name = ""
        self.length = None
        self.children = []
        self.pos = pos


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.i = 0

    def skip(self):
        text = self.text
        while self.i < len(text):
            ch = text[self.i]
            if ch.isspace():
                self.i += 1
            elif ch == "[":
                j = text.find("]", self.i)
                if j < 0:
                    raise NewickError("unterminated comment", self.i)
                self.i = j + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.i] if self.i < len(self.text) else ""

    def subtree(self) -> _Node:
        # explicit stack: deep caterpillars would overflow Python recursion
        root = _Node(self.i)
        stack = []  # (node, offset of its open paren)
        node = root
        while True:
            if self.peek() == "(":
                stack.append((node, self.i))
                self.i += 1
                child = _Node(self.i)
                node.children.append(child)
                node = child
                continue
            self.label(node)
            while True:
                if not stack:
                    return root
                parent, open_at = stack[-1]
                ch = self.peek()
                if ch == ",":
                    self.i += 1
                    node = _Node(self.i)
                    parent.children.append(node)
                    break
                if ch == ")":
                    self.i += 1
                    stack.pop()
                    node = parent
                    self.label(node)
                    continue
                raise NewickError("unbalanced parenthesis", open_at)

    def label(self, node):
        self.skip()
        if self.i < len(self.text) and self.text[self.i] == "'":
            j = self.text.find("'", self.i + 1)
            if j < 0:
                raise NewickError("unterminated quoted label", self.i)
            node.name = self.text[self.i + 1 : j]
            self.i = j + 1
        else:
            m = _LABEL.match(self.text, self.i)
            if m:
                node.name = m.group(0)
                self.i = m.end()
        if self.peek() == ":":
            self.i += 1
            self.skip()
            m = _NUMBER.match(self.text, self.i)
            if not m:
                raise NewickError("expected branch length", self.i)
            node.length = float(m.group(0))
            self.i = m.end()


def _parse_tree(text: str) -> tuple[_Node, dict[str, str]]:
    meta: dict[str, str] = {}
    for m in _META.finditer(text):
        for item in m.group(1).split(","):
            if "=" in item:
                k, v = item.split("=", 1)
                meta[k.strip()] = v.strip()
    p = _Parser(text)
    root = p.subtree()
    if p.peek() != ";":
        raise NewickError("expected ';'", p.i)
    p.i += 1
    if p.peek():
        raise NewickError("trailing characters after ';'", p.i)
    return root, meta


def _leaves_in_order(root: _Node) -> list[_Node]:
    out, stack = [], [root]
    while stack:
        v = stack.pop()
        if v.children:
            stack.extend(reversed(v.children))
        else:
            out.append(v)
    names = [v.name for v in out]
    if any(not s for s in names):
        raise NewickError("unnamed leaf", next(v.pos for v in out if not v.name))
    seen = set()
    for v in out:
        if v.name in seen:
            raise NewickError(f"duplicate leaf name {v.name!r}", v.pos)
        seen.add(v.name)
    return out


def parse_newick(text: str, *, rooted: bool | None = None):
    """Parse Newick text into a :class:`WeightedTopology` or :class:`RootedEvoTree`.

    A ``[&metric=prob]`` comment (optionally ``[&metric=prob,m=4]``) yields a
    rooted tree whose branch annotations are mutation probabilities.
    ``[&metric=dist]`` or no comment yields an unrooted topology whose
    annotations are additive lengths; a bifurcating root is suppressed by
    merging its two edges.  ``rooted`` overrides the comment.
    """
    root, meta = _parse_tree(text)
    metric = meta.get("metric", "dist")
    if metric not in ("dist", "prob"):
        raise NewickError(f"unknown metric {metric!r}", 0)
    want_rooted = metric == "prob" if rooted is None else rooted
    leaves = _leaves_in_order(root)
    index = {id(v): i for i, v in enumerate(leaves)}
    names = [v.name for v in leaves]
    for v in _walk(root):
        if v.children and len(v.children) != 2 and not (v is root and len(v.children) == 3):
            raise NewickError(f"node with {len(v.children)} children is not binary", v.pos)
    if want_rooted:
        if len(root.children) != 2:
            raise NewickError("rooted tree must have a bifurcating root", root.pos)
        n = len(leaves)
        parent = np.full(2 * n - 1, -1, dtype=np.int64)
        prob = np.full(2 * n - 1, np.nan)
        nxt = n
        ids = {}
        for v in _walk(root):
            if v.children:
                ids[id(v)] = nxt
                nxt += 1
            else:
                ids[id(v)] = index[id(v)]
        for v in _walk(root):
            for c in v.children:
                parent[ids[id(c)]] = ids[id(v)]
                prob[ids[id(c)]] = c.length if c.length is not None else 0.0
        return RootedEvoTree(tuple(names), parent, prob, m=int(meta.get("m", 4)))

    n = len(leaves)
    ids = {}
    nxt = n
    for v in _walk(root):
        if v.children and not (v is root and len(v.children) == 2):
            ids[id(v)] = nxt
            nxt += 1
        elif not v.children:
            ids[id(v)] = index[id(v)]
    edges, lengths = [], []
    for v in _walk(root):
        if v is root and len(v.children) == 2:
            a, b = v.children
            edges.append((ids[id(a)], ids[id(b)]))
            lengths.append((a.length or 0.0) + (b.length or 0.0))
            continue
        for c in v.children:
            edges.append((ids[id(v)], ids[id(c)]))
            lengths.append(c.length if c.length is not None else 1.0)
    return WeightedTopology(tuple(names), tuple(edges), np.array(lengths))


def _walk(root: _Node):
    stack = [root]
    while stack:
        v = stack.pop()
        yield v
        stack.extend(reversed(v.children))


def _quote(name: str) -> str:
    if _LABEL.fullmatch(name):
        return name
    return "'" + name + "'"


def _num(x: float) -> str:
    return repr(float(x))


def serialize_newick(tree) -> str:
    """Newick text with a leading ``[&metric=...]`` comment.

    Lengths are written with ``repr`` so they round-trip exactly.
    """
    if isinstance(tree, RootedEvoTree):
        n = tree.n_leaves
        kids = {v: tree.children[v] for v in range(n, tree.n_nodes)}
        label = lambda v: _quote(tree.names[v])  # noqa: E731
        suffix = lambda v: "" if v == tree.root else ":" + _num(tree.edge_prob[v])  # noqa: E731
        return f"[&metric=prob,m={tree.m}]" + _emit(tree.root, kids, label, suffix) + ";"

    if not isinstance(tree, WeightedTopology):
        raise TypeError(f"cannot serialize {type(tree).__name__}")
    n = tree.n_leaves
    start = tree.adjacency[0][0][0]  # internal node next to leaf 0
    kids, above = {}, {start: None}
    for v in _bfs_order(tree.adjacency, start):
        if v >= n:
            kids[v] = [u for u, _ in tree.adjacency[v] if u not in above]
            for u, k in tree.adjacency[v]:
                if u not in above:
                    above[u] = k
    label = lambda v: _quote(tree.names[v])  # noqa: E731
    suffix = lambda v: "" if above[v] is None else ":" + _num(tree.lengths[above[v]])  # noqa: E731
    return "[&metric=dist]" + _emit(start, kids, label, suffix) + ";"


def _emit(root, kids, label, suffix) -> str:
    out = []
    stack: list = [root]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
        elif item not in kids:
            out.append(label(item) + suffix(item))
        else:
            out.append("(")
            stack.append(")" + suffix(item))
            children = kids[item]
            for j in range(len(children) - 1, -1, -1):
                stack.append(children[j])
                if j:
                    stack.append(",")
    return "".join(out)
