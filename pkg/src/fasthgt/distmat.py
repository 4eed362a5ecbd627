"""Closeness and distance estimation, triplet geometry, and tail bounds."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

INFINITE = math.inf
"""Marker for the distance of a leaf pair whose estimated closeness is <= 0."""


class DistanceMatrix:
    """Symmetric leaf-pair closenesses with derived distances.

    Closeness is the primary quantity.  The distance of a pair is
    ``-ln c`` when ``c > 0`` and :data:`INFINITE` otherwise; it is derived on
    first access unless supplied at construction (exact oracles supply it to
    avoid a round trip through ``exp``).
    """

    def __init__(self, names: Sequence[str], closeness, distances=None):
        names = tuple(names)
        c = np.array(closeness, dtype=float)
        n = len(names)
        if c.shape != (n, n):
            raise ValueError(f"closeness must be {n}x{n}")
        if len(set(names)) != n:
            raise ValueError("names must be unique")
        if not np.allclose(c, c.T, rtol=0, atol=0):
            raise ValueError("closeness matrix is not symmetric")
        if np.any(np.isnan(c)):
            raise ValueError("closeness contains NaN")
        np.fill_diagonal(c, 1.0)
        c.setflags(write=False)
        self.names = names
        self.closeness = c
        self._dist = None
        if distances is not None:
            d = np.array(distances, dtype=float)
            if d.shape != (n, n):
                raise ValueError(f"distances must be {n}x{n}")
            np.fill_diagonal(d, 0.0)
            d.setflags(write=False)
            self._dist = d

    @classmethod
    def from_distances(cls, names, distances) -> "DistanceMatrix":
        d = np.array(distances, dtype=float)
        if np.any(d < 0) or np.any(np.isnan(d)):
            raise ValueError("distances must be nonnegative")
        if not np.array_equal(d, d.T):
            raise ValueError("distance matrix is not symmetric")
        with np.errstate(over="ignore"):
            c = np.exp(-d)  # exp(-inf) = 0, i.e. non-positive closeness
        return cls(names, c, d)

    def __len__(self):
        return len(self.names)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def distances(self) -> np.ndarray:
        if self._dist is None:
            d = np.full(self.closeness.shape, INFINITE)
            pos = self.closeness > 0
            d[pos] = -np.log(self.closeness[pos])
            np.fill_diagonal(d, 0.0)
            d.setflags(write=False)
            self._dist = d
        return self._dist

    def distance(self, i: int, j: int) -> float:
        return float(self.distances[i, j])

    def __repr__(self):
        return f"DistanceMatrix(n={self.n})"


def estimate_closeness(seq_x, seq_y, m: int) -> float:
    """Average of +1 (match) / -1/(m-1) (mismatch) over aligned sites."""
    x = np.asarray(list(seq_x) if isinstance(seq_x, str) else seq_x)
    y = np.asarray(list(seq_y) if isinstance(seq_y, str) else seq_y)
    if x.shape != y.shape:
        raise ValueError("sequences differ in length")
    if x.size == 0:
        raise ValueError("sequences are empty")
    matches = int(np.count_nonzero(x == y))
    return _closeness_from_matches(matches, x.size, m)


def _closeness_from_matches(matches, ell, m):
    return (matches - (ell - matches) / (m - 1)) / ell


def closeness_to_distance(c: float) -> float:
    """``-ln c`` for positive closeness, :data:`INFINITE` otherwise."""
    return -math.log(c) if c > 0 else INFINITE


def closeness_from_agreement(agree: np.ndarray, ell: int, m: int) -> np.ndarray:
    """Closeness matrix from pairwise match counts over ``ell`` sites."""
    return _closeness_from_matches(np.asarray(agree, dtype=float), ell, m)


def distance_matrix_from_sequences(seqs, m: int | None = None) -> DistanceMatrix:
    """Pairwise closeness estimates for every pair of sequences.

    ``seqs`` is a :class:`~fasthgt.evolve.SequenceSet`.  Match counts are
    formed with one indicator matrix per symbol, so the work is
    ``O(n^2 ell)`` inside BLAS.
    """
    m = seqs.m if m is None else m
    codes = np.asarray(seqs.codes)
    ell = codes.shape[1]
    if ell < 1:
        raise ValueError("sequences are empty")
    agree = np.zeros((codes.shape[0],) * 2)
    for a in range(m):
        ind = (codes == a).astype(np.float64)
        agree += ind @ ind.T
    return DistanceMatrix(seqs.names, closeness_from_agreement(agree, ell, m))


def is_positive(c_xy: float, c_xz: float, c_yz: float) -> bool:
    return c_xy > 0 and c_xz > 0 and c_yz > 0


def triplet_closeness(c_xy: float, c_xz: float, c_yz: float) -> float:
    """Harmonic mean of the three pairwise closenesses of a positive triplet."""
    if not is_positive(c_xy, c_xz, c_yz):
        raise ValueError("triplet closeness needs three positive closenesses")
    return 3.0 / (1.0 / c_xy + 1.0 / c_xz + 1.0 / c_yz)


def center_leg(d_xy: float, d_xz: float, d_yz: float) -> float:
    """Distance from X to the center of triplet XYZ, ``(d_xy + d_xz - d_yz)/2``."""
    if math.isinf(d_xy) or math.isinf(d_xz) or math.isinf(d_yz):
        raise ValueError("center leg undefined for infinite distances")
    return (d_xy + d_xz - d_yz) / 2.0


def hoeffding_pair_tail(ell: int, closeness: float, epsilon: float, alpha: float) -> float:
    """Upper bound on P(c_hat / c <= 1 - eps), and on P(c_hat / c >= 1 + eps).

    Hoeffding's inequality for ``ell`` i.i.d. indicators bounded in
    ``[-1/(m-1), 1]`` (a range of width ``alpha``).
    """
    return math.exp(-(2.0 / alpha**2) * ell * closeness**2 * epsilon**2)


def center_tail(ell: int, triplet_c: float, epsilon: float, alpha: float) -> float:
    """Upper bound on P(d_hat_XP - d_XP >= -ln(1 - eps) / 2).

    The raw value ``3 exp(-(2 / (9 alpha^2)) ell c_XYZ^2 eps^2)`` may exceed 1.
    """
    return 3.0 * math.exp(-(2.0 / (9.0 * alpha**2)) * ell * triplet_c**2 * epsilon**2)


def write_phylip(dm: DistanceMatrix, fh):
    """Square PHYLIP matrix; infinite distances are written as ``Inf``."""
    fh.write(f"{dm.n}\n")
    d = dm.distances
    for i, name in enumerate(dm.names):
        row = ["Inf" if math.isinf(x) else repr(float(x)) for x in d[i]]
        fh.write(name + " " + " ".join(row) + "\n")


def read_phylip(fh) -> DistanceMatrix:
    tokens = fh.read().split()
    if not tokens:
        raise ValueError("empty PHYLIP file")
    try:
        n = int(tokens[0])
    except ValueError:
        raise ValueError("PHYLIP header must be the taxon count") from None
    if len(tokens) != 1 + n * (n + 1):
        raise ValueError(f"expected {n} rows of a name and {n} values")
    names, rows = [], []
    for i in range(n):
        chunk = tokens[1 + i * (n + 1) : 1 + (i + 1) * (n + 1)]
        names.append(chunk[0])
        rows.append([INFINITE if s.lower() in ("inf", "infinity") else float(s) for s in chunk[1:]])
    return DistanceMatrix.from_distances(names, np.array(rows))
