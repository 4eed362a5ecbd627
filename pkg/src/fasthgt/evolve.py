"""Ground truth: random trees, Jukes-Cantor site evolution, exact closeness.

Randomness
----------
Every random draw comes from a NumPy ``Generator`` built on a
``SeedSequence``.  Simulation splits the stream by a fixed rule so that
results do not depend on evaluation order:

* root sequence, block ``b``  -> ``SeedSequence(seed, spawn_key=(0, 0, b))``
* edge above node ``v``, block ``b`` -> ``SeedSequence(seed, spawn_key=(1, v, b))``

Blocks are ``BLOCK_SITES`` consecutive sites.  Any block can therefore be
simulated independently (e.g. in another thread) and the concatenation is
bitwise identical to a serial run.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distmat import DistanceMatrix
from .treecore import RootedEvoTree

BLOCK_SITES = 1 << 16

DNA = ("A", "C", "G", "T")


@dataclass(frozen=True)
class EvoModel:
    """Generalized Jukes-Cantor model with mutation bounds ``f <= p_e <= g``."""

    m: int = 4
    f: float = 0.05
    g: float = 0.1
    alphabet: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("alphabet size m must be at least 2")
        if not 0 < self.f <= self.g < 1 - 1 / self.m:
            raise ValueError(f"need 0 < f <= g < 1 - 1/m, got f={self.f}, g={self.g}, m={self.m}")
        alphabet = self.alphabet
        if alphabet is None:
            alphabet = DNA if self.m == 4 else tuple(f"S{i}" for i in range(self.m))
        alphabet = tuple(alphabet)
        if len(alphabet) != self.m or len(set(alphabet)) != self.m:
            raise ValueError("alphabet must hold m distinct symbols")
        object.__setattr__(self, "alphabet", alphabet)

    @property
    def alpha(self) -> float:
        return self.m / (self.m - 1)


class TreeShape(str, enum.Enum):
    UNIFORM = "uniform"
    YULE_HARDING = "yule_harding"
    CATERPILLAR = "caterpillar"
    BALANCED = "balanced"


@dataclass(frozen=True, eq=False)
class SequenceSet:
    """Leaf sequences stored as symbol codes ``0 .. m-1`` in an ``(n, ell)`` array."""

    names: tuple[str, ...]
    codes: np.ndarray
    alphabet: tuple[str, ...]

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2 or codes.shape[0] != len(self.names):
            raise ValueError("codes must have one row per name")
        if codes.shape[1] < 1:
            raise ValueError("sequences must have length >= 1")
        if codes.size and (codes.min() < 0 or codes.max() >= len(self.alphabet)):
            raise ValueError("symbol code outside the alphabet")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "alphabet", tuple(self.alphabet))

    @property
    def m(self) -> int:
        return len(self.alphabet)

    @property
    def length(self) -> int:
        return self.codes.shape[1]

    def sequence(self, i: int) -> str:
        return "".join(self.alphabet[c] for c in self.codes[i])

    @classmethod
    def from_strings(cls, names, seqs, alphabet):
        lookup = {s: i for i, s in enumerate(alphabet)}
        if len({len(s) for s in seqs}) != 1:
            raise ValueError("sequences have different lengths")
        try:
            codes = np.array([[lookup[ch] for ch in s] for s in seqs], dtype=np.uint8)
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in alphabet") from None
        return cls(tuple(names), codes, tuple(alphabet))


# ---------------------------------------------------------------------------
# tree generation
# ---------------------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _random_topology(n: int, shape: TreeShape, rng: np.random.Generator):
    """Children lists of a rooted binary tree; returns (children dict, root)."""
    kids: dict[int, list[int]] = {}
    nxt = n
    if shape is TreeShape.UNIFORM:
        # Adding leaf k onto one of the 2k-3 edges (or above the root) uniformly
        # gives the uniform distribution over labelled rooted binary trees.
        parent = {0: n, 1: n}
        kids[n] = [0, 1]
        root = n
        nxt = n + 1
        for leaf in range(2, n):
            targets = sorted(parent) + [root]
            v = targets[rng.integers(len(targets))]
            new = nxt
            nxt += 1
            if v == root:
                kids[new] = [v, leaf]
                parent[v] = new
                root = new
            else:
                p = parent[v]
                kids[p][kids[p].index(v)] = new
                kids[new] = [v, leaf]
                parent[new] = p
                parent[v] = new
            parent[leaf] = new
        return kids, root
    if shape is TreeShape.YULE_HARDING:
        parent = {0: n, 1: n}
        kids[n] = [0, 1]
        nxt = n + 1
        for leaf in range(2, n):
            v = int(rng.integers(leaf))  # uniformly chosen existing leaf
            p = parent[v]
            new = nxt
            nxt += 1
            kids[p][kids[p].index(v)] = new
            kids[new] = [v, leaf]
            parent[new] = p
            parent[v] = new
            parent[leaf] = new
        return kids, n
    if shape is TreeShape.CATERPILLAR:
        cur = 0
        for leaf in range(1, n):
            kids[nxt] = [cur, leaf]
            cur = nxt
            nxt += 1
        return kids, cur
    if shape is TreeShape.BALANCED:
        counter = itertools.count(n)

        def build(lo, hi):
            if hi - lo == 1:
                return lo
            mid = (lo + hi + 1) // 2
            left, right = build(lo, mid), build(mid, hi)
            v = next(counter)
            kids[v] = [left, right]
            return v

        return kids, build(0, n)
    raise ValueError(f"unknown shape {shape!r}")


def uniform_edge_sampler(model: EvoModel) -> Callable[[np.random.Generator, int], np.ndarray]:
    return lambda rng, size: rng.uniform(model.f, model.g, size)


def gen_tree(
    n: int,
    shape: TreeShape | str = TreeShape.UNIFORM,
    model: EvoModel | None = None,
    seed=None,
    edge_prob_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None,
    *,
    names: Sequence[str] | None = None,
) -> RootedEvoTree:
    """Random rooted tree with ``n`` leaves and edge probabilities in ``[f, g]``.

    Leaf labels ``t0 .. t{n-1}`` are randomly permuted over the shape, so no
    leaf index is structurally special.  ``edge_prob_sampler(rng, size)``
    defaults to uniform on ``[f, g]``.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    model = model or EvoModel()
    shape = TreeShape(shape)
    rng = _rng(seed)
    kids, root = _random_topology(n, shape, rng)
    perm = rng.permutation(n)  # position -> leaf id
    relabel = {i: int(perm[i]) for i in range(n)}
    internal = sorted(kids)
    relabel.update({v: n + j for j, v in enumerate(internal)})
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    for v, (a, b) in kids.items():
        parent[relabel[a]] = relabel[v]
        parent[relabel[b]] = relabel[v]
    sampler = edge_prob_sampler or uniform_edge_sampler(model)
    prob = np.asarray(sampler(rng, 2 * n - 1), dtype=float)
    if np.any(prob < model.f) or np.any(prob > model.g):
        raise ValueError("edge probability sampler left the [f, g] range")
    prob[relabel[root]] = np.nan
    if names is None:
        names = [f"t{i}" for i in range(n)]
    return RootedEvoTree(tuple(names), parent, prob, m=model.m)


# ---------------------------------------------------------------------------
# site evolution
# ---------------------------------------------------------------------------


def _stream(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _mutate(parent_codes, p, m, rng):
    size = parent_codes.shape[0]
    hit = rng.random(size) < p
    shift = rng.integers(1, m, size=size, dtype=np.uint8)
    return ((parent_codes + shift * hit) % m).astype(np.uint8)


def evolve_sequences(
    t: RootedEvoTree,
    ell: int,
    seed: int = 0,
    root_seq: Sequence[int] | np.ndarray | None = None,
    *,
    alphabet: Sequence[str] | None = None,
) -> SequenceSet:
    """Evolve ``ell`` independent sites down ``t``.

    On each edge a site keeps its parent's symbol with probability ``1 - p_e``
    and otherwise switches to one of the other ``m - 1`` symbols uniformly.
    ``root_seq`` holds symbol codes; it defaults to i.i.d. uniform symbols.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    m = t.m
    if alphabet is None:
        alphabet = DNA if m == 4 else tuple(f"S{i}" for i in range(m))
    if root_seq is not None:
        root_seq = np.asarray(root_seq, dtype=np.uint8)
        if root_seq.shape != (ell,):
            raise ValueError(f"root sequence has length {root_seq.size}, expected {ell}")
        if root_seq.size and root_seq.max() >= m:
            raise ValueError("root sequence symbol outside the alphabet")
    seed = int(seed)
    n = t.n_leaves
    out = np.empty((n, ell), dtype=np.uint8)
    order = t.preorder()
    for b, lo in enumerate(range(0, ell, BLOCK_SITES)):
        hi = min(ell, lo + BLOCK_SITES)
        if root_seq is None:
            rs = _stream(seed, (0, 0, b)).integers(0, m, size=hi - lo, dtype=np.uint8)
        else:
            rs = root_seq[lo:hi]
        state = {t.root: rs}
        for v in order:
            if v == t.root:
                continue
            pv = int(t.parent[v])
            codes = _mutate(state[pv], float(t.edge_prob[v]), m, _stream(seed, (1, v, b)))
            if v < n:
                out[v, lo:hi] = codes
            else:
                state[v] = codes
            if v == t.children[pv][-1]:
                del state[pv]
    return SequenceSet(t.names, out, tuple(alphabet))


def site_pattern_distribution(t: RootedEvoTree) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of the leaf pattern at one site (uniform root).

    Returns ``(patterns, probs)`` with ``patterns`` of shape ``(m**n, n)``.
    Only practical for small ``m**n``.
    """
    n, m = t.n_leaves, t.m
    if m**n > 1 << 22:
        raise ValueError(f"m**n = {m**n} patterns is too many to enumerate")
    patterns = np.array(list(itertools.product(range(m), repeat=n)), dtype=np.uint8)
    eye = np.eye(m)
    partial: dict[int, np.ndarray] = {}
    for v in reversed(t.preorder()):
        if v < n:
            partial[v] = eye[patterns[:, v]]
            continue
        acc = np.ones((len(patterns), m))
        for c in t.children[v]:
            p = float(t.edge_prob[c])
            trans = (1 - p) * eye + (p / (m - 1)) * (1 - eye)
            acc *= partial.pop(c) @ trans.T
        partial[v] = acc
    probs = partial[t.root].sum(axis=1) / m
    return patterns, probs


def simulate_site_patterns(t: RootedEvoTree, ell: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Site-pattern counts of ``ell`` i.i.d. sites with a uniform root.

    Equal in distribution to tallying the columns of ``evolve_sequences``
    with the default root, but costs nothing per site, so very long
    alignments (``ell`` in the billions) are cheap for small trees.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    patterns, probs = site_pattern_distribution(t)
    probs = probs / probs.sum()
    counts = np.random.default_rng(seed).multinomial(ell, probs)
    keep = counts > 0
    return patterns[keep], counts[keep]


# ---------------------------------------------------------------------------
# exact oracles
# ---------------------------------------------------------------------------


def node_depths(t: RootedEvoTree) -> np.ndarray:
    """Additive distance from the root to every node."""
    depth = np.zeros(t.n_nodes)
    for v in t.preorder():
        if v != t.root:
            depth[v] = depth[t.parent[v]] + t.edge_length(v)
    return depth


def path(t: RootedEvoTree, u: int, v: int) -> list[int]:
    """Nodes on the path from ``u`` to ``v`` (inclusive)."""
    up = [u]
    while up[-1] != t.root:
        up.append(int(t.parent[up[-1]]))
    anc = {w: i for i, w in enumerate(up)}
    down = [v]
    while down[-1] not in anc:
        down.append(int(t.parent[down[-1]]))
    return up[: anc[down[-1]] + 1] + down[-2::-1]


def exact_closeness(t: RootedEvoTree, x: int | str, y: int | str) -> float:
    """Product of ``1 - alpha p_e`` over the edges between two nodes."""
    x = t.leaf_index(x) if isinstance(x, str) else int(x)
    y = t.leaf_index(y) if isinstance(y, str) else int(y)
    for v in (x, y):
        if not 0 <= v < t.n_nodes:
            raise KeyError(f"unknown node {v}")
    nodes = path(t, x, y)
    c = 1.0
    for a, b in zip(nodes, nodes[1:]):
        child = a if t.parent[a] == b else b
        c *= 1.0 - t.alpha * t.edge_prob[child]
    return c


def exact_distance_matrix(t: RootedEvoTree) -> DistanceMatrix:
    """Leaf-pair distances ``-ln c_XY`` summed exactly along tree paths."""
    n = t.n_leaves
    depth = node_depths(t)
    dist = np.zeros((n, n))
    below: dict[int, list[int]] = {}
    for v in reversed(t.preorder()):
        if v < n:
            below[v] = [v]
            continue
        a, b = t.children[v]
        la, lb = below.pop(a), below.pop(b)
        block = depth[la][:, None] + depth[lb][None, :] - 2 * depth[v]
        dist[np.ix_(la, lb)] = block
        dist[np.ix_(lb, la)] = block.T
        below[v] = la + lb
    return DistanceMatrix.from_distances(t.names, dist)


def all_node_distances(t: RootedEvoTree) -> np.ndarray:
    """Dense ``(2n-1, 2n-1)`` matrix of additive node-to-node distances."""
    depth = node_depths(t)
    nn = t.n_nodes
    out = np.zeros((nn, nn))
    for u in range(nn):
        for v in range(u + 1, nn):
            nodes = path(t, u, v)
            top = min(nodes, key=lambda w: depth[w])
            out[u, v] = out[v, u] = depth[u] + depth[v] - 2 * depth[top]
    return out


def count_pattern_agreement(patterns: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """``(n, n)`` number of sites where each pair of leaves agrees."""
    n = patterns.shape[1]
    agree = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        same = patterns == patterns[:, [i]]
        agree[i] = counts @ same
    return agree


def write_fasta(seqs: SequenceSet, fh, width: int = 80):
    for i, name in enumerate(seqs.names):
        fh.write(f">{name}\n")
        s = seqs.sequence(i)
        for lo in range(0, len(s), width):
            fh.write(s[lo : lo + width] + "\n")


def read_fasta(fh, alphabet: Sequence[str] | None = None) -> SequenceSet:
    names, chunks = [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            names.append(line[1:].split()[0])
            chunks.append([])
        elif not names:
            raise ValueError("FASTA data before the first header")
        else:
            chunks[-1].append(line)
    seqs = ["".join(c).upper() for c in chunks]
    if not seqs:
        raise ValueError("no FASTA records")
    if len({len(s) for s in seqs}) != 1:
        raise ValueError("ragged FASTA: sequences differ in length")
    if alphabet is None:
        present = sorted(set("".join(seqs)))
        alphabet = DNA if set(present) <= set(DNA) else tuple(present)
    return SequenceSet.from_strings(names, seqs, tuple(alphabet))


def closeness_floor(model: EvoModel) -> float:
    """Smallest possible per-edge closeness ``1 - alpha g``."""
    return 1.0 - model.alpha * model.g


def min_edge_length(model: EvoModel) -> float:
    """Smallest possible edge length ``-ln(1 - alpha f)``."""
    return -math.log1p(-model.alpha * model.f)
