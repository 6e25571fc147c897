"""Homomorphism densities of small graphs, density-gap search, binomial
extensions of stochastic kernels and plug-in mutual information on tiny
alphabets.

Densities use homomorphism counting: t(F, G) is the fraction of all vertex
maps V(F) -> V(G) that send every edge of F onto an edge of G.
"""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import CapacityError, distortion

MAX_PATTERN_VERTICES = 8
MAX_HOST_VERTICES = 10
MAX_EXTENSION_COLUMNS = 10**6
MAX_COUPLINGS = 2 * 10**6


class InfeasibleError(ValueError):
    """No candidate satisfies the feasibility predicate."""


@dataclass(frozen=True)
class SmallGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=bool)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        if not 1 <= A.shape[0] <= MAX_HOST_VERTICES:
            raise ValueError(f"graphs have 1..{MAX_HOST_VERTICES} vertices")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A)):
            raise ValueError("self-loops are not allowed")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @classmethod
    def from_edges(cls, n_vertices: int, edges: Iterable[tuple[int, int]]) -> "SmallGraph":
        A = np.zeros((n_vertices, n_vertices), dtype=bool)
        for u, v in edges:
            A[u, v] = A[v, u] = True
        return cls(A)

    @classmethod
    def parse(cls, text: str, n_vertices: int | None = None) -> "SmallGraph":
        """Parse an edge list such as ``"0-1,1-2"``."""
        edges = []
        for item in filter(None, (t.strip() for t in text.split(","))):
            u, v = item.split("-")
            edges.append((int(u), int(v)))
        n = n_vertices if n_vertices is not None else 1 + max((max(e) for e in edges), default=0)
        return cls.from_edges(n, edges)

    @classmethod
    def complete(cls, k: int) -> "SmallGraph":
        return cls(~np.eye(k, dtype=bool))

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(iu.tolist(), ju.tolist()))

    def relabel(self, perm: Sequence[int]) -> "SmallGraph":
        """Graph with vertex ``i`` renamed to ``perm[i]``."""
        p = np.asarray(perm)
        A = np.zeros_like(self.adjacency)
        A[np.ix_(p, p)] = self.adjacency
        return SmallGraph(A)

    def laplacian(self) -> np.ndarray:
        A = self.adjacency.astype(float)
        return np.diag(A.sum(axis=1)) - A

    def __str__(self) -> str:
        return ",".join(f"{u}-{v}" for u, v in self.edges)


def hom_count(f: SmallGraph, g: SmallGraph) -> int:
    """Number of homomorphisms from ``f`` to ``g``.

    Sums, over every assignment of host vertices to pattern vertices, the
    product of host adjacency entries along the pattern edges; isolated
    pattern vertices contribute a free factor |V(g)|.
    """
    k = f.n_vertices
    if k > MAX_PATTERN_VERTICES:
        raise CapacityError(f"pattern graph has {k} > {MAX_PATTERN_VERTICES} vertices")
    A = g.adjacency.astype(np.int64)
    ones = np.ones(g.n_vertices, dtype=np.int64)
    letters = string.ascii_lowercase[:k]
    operands, terms = [], []
    for u, v in f.edges:
        terms.append(letters[u] + letters[v])
        operands.append(A)
    covered = {u for e in f.edges for u in e}
    for u in range(k):
        if u not in covered:
            terms.append(letters[u])
            operands.append(ones)
    return int(np.einsum(",".join(terms) + "->", *operands, optimize="greedy"))


def hom_density(f: SmallGraph, g: SmallGraph) -> float:
    """t(f, g) = hom(f, g) / |V(g)|^|V(f)|."""
    return hom_count(f, g) / g.n_vertices ** f.n_vertices


def density_distortion(g1: SmallGraph, g2: SmallGraph, g: SmallGraph) -> float:
    """Squared gap between the densities of ``g1`` and ``g2`` in ``g``."""
    return distortion([[hom_density(g1, g)]], [[hom_density(g2, g)]])


@dataclass(frozen=True)
class DensityGapResult:
    pair: tuple[SmallGraph, SmallGraph]
    index: int
    gap: float
    within_tolerance: bool
    gaps: tuple[float, ...]


def minimize_density_gap(
    candidates: Sequence[tuple[SmallGraph, SmallGraph]], g: SmallGraph, nu1: float
) -> DensityGapResult:
    """Exhaustive scan for the pair with the smallest density distortion.

    Ties go to the first pair in list order; ``within_tolerance`` flags
    ``gap <= nu1``.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    gaps = tuple(density_distortion(a, b, g) for a, b in candidates)
    best = int(np.argmin(gaps))
    return DensityGapResult(tuple(candidates[best]), best, gaps[best], gaps[best] <= nu1, gaps)


# --------------------------------------------------------------------------
# pmfs and kernels


@dataclass(frozen=True)
class DiscretePMF:
    """Distribution over the integers 1..len(probs)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("probabilities must be a nonempty nonnegative vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.probs.size + 1)


@dataclass(frozen=True)
class StochasticKernel:
    """Row-stochastic matrix: rows index input symbols, columns output symbols."""

    matrix: np.ndarray

    def __post_init__(self):
        K = np.array(self.matrix, dtype=float)
        if K.ndim != 2 or np.any(K < 0):
            raise ValueError("kernel must be a nonnegative matrix")
        if np.any(np.abs(K.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("kernel rows must sum to 1")
        K.setflags(write=False)
        object.__setattr__(self, "matrix", K)


def binomial_extension(v: StochasticKernel, d: int) -> StochasticKernel:
    """Order-``d`` product kernel V[b_0..b_{d-1} | a] = prod_i V[b_i | a].

    Output columns enumerate tuples in lexicographic order with ``b_0`` most
    significant.
    """
    if d < 1:
        raise ValueError("order must be a positive integer")
    n_out = v.matrix.shape[1]
    if n_out**d > MAX_EXTENSION_COLUMNS:
        raise CapacityError(f"{n_out}^{d} output columns exceed {MAX_EXTENSION_COLUMNS}")
    rows = []
    for row in v.matrix:
        out = row
        for _ in range(d - 1):
            out = np.multiply.outer(out, row).ravel()
        rows.append(out)
    return StochasticKernel(np.array(rows))


@dataclass(frozen=True)
class JointPMF:
    """Joint probability table; axis i is the alphabet of variable i."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim < 2 or np.any(t < 0):
            raise ValueError("joint table must be a nonnegative array of rank >= 2")
        if abs(t.sum() - 1.0) > 1e-12:
            raise ValueError("joint table must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in bits with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def mutual_information(joint) -> float:
    """Plug-in I(X; Y) in bits for a two-way joint table."""
    t = joint.table if isinstance(joint, JointPMF) else np.asarray(joint, dtype=float)
    if t.ndim != 2:
        raise ValueError("mutual_information expects a two-way table")
    px = t.sum(axis=1, keepdims=True)
    py = t.sum(axis=0, keepdims=True)
    mask = t > 0
    ratio = t[mask] / (px * py)[mask]
    return max(0.0, float(np.sum(t[mask] * np.log2(ratio))))


def _couplings(px: np.ndarray, ny: int, grid: int):
    """All joints px[x] * q(y | x) with conditionals on the ``grid`` simplex lattice."""
    lattice = [c for c in itertools.product(range(grid + 1), repeat=ny) if sum(c) == grid]
    rows = np.array(lattice, dtype=float) / grid
    nx = px.size
    total = len(rows) ** nx
    if total > MAX_COUPLINGS:
        raise CapacityError(f"{total} couplings exceed the search bound {MAX_COUPLINGS}")
    for combo in itertools.product(range(len(rows)), repeat=nx):
        yield px[:, None] * rows[list(combo)]


def min_mi_over_couplings(
    marginal_x: DiscretePMF | Sequence[float],
    alphabet_y_size: int,
    feasible: Callable[[JointPMF], bool],
    grid: int,
) -> tuple[JointPMF, float]:
    """Grid search for the feasible coupling with fixed X-marginal and least I(X; Y).

    The conditional rows q(. | x) range over the lattice of the probability
    simplex with spacing 1/grid. The first minimiser in enumeration order is
    returned.
    """
    px = np.asarray(getattr(marginal_x, "probs", marginal_x), dtype=float)
    if px.size > 4 or alphabet_y_size > 4:
        raise CapacityError("alphabets are limited to 4 symbols")
    if not 1 <= grid <= 200:
        raise CapacityError("grid must lie in 1..200")
    best, best_mi = None, np.inf
    for table in _couplings(px, alphabet_y_size, grid):
        joint = JointPMF(table / table.sum())
        if not feasible(joint):
            continue
        mi = mutual_information(joint)
        if mi < best_mi - 1e-15:
            best, best_mi = joint, mi
    if best is None:
        raise InfeasibleError("no coupling on the grid satisfies the predicate")
    return best, best_mi


def conditional_mutual_information(table: np.ndarray, a: int, b: int, c: int) -> float:
    """I(A; B | C) from a joint table via H(A,C) + H(B,C) - H(A,B,C) - H(C)."""
    t = np.asarray(table, dtype=float)

    def h(axes):
        drop = tuple(i for i in range(t.ndim) if i not in axes)
        return entropy(t.sum(axis=drop))

    return h((a, c)) + h((b, c)) - h((a, b, c)) - h((c,))


@dataclass(frozen=True)
class MIChainAudit:
    """Both sides of the conditional-MI difference identity.

    ``lhs`` is I(X;X1|X2) - I(X;X2|X1) from conditional entropies and
    ``rhs`` is I(X;X1) - I(X;X2) from pairwise marginals. ``defect`` is
    their gap (zero up to round-off); ``reversed_defect`` is the gap to the
    opposite orientation I(X;X2) - I(X;X1).
    """

    lhs: float
    rhs: float
    defect: float
    reversed_defect: float


def mi_difference_identity_check(joint) -> MIChainAudit:
    """Evaluate the conditional-MI difference two independent ways on a 3-way joint."""
    t = joint.table if isinstance(joint, JointPMF) else np.asarray(joint, dtype=float)
    if t.ndim != 3:
        raise ValueError("expected a joint table over (X, X1, X2)")
    if max(t.shape) > 3:
        raise CapacityError("alphabets are limited to 3 symbols")
    lhs = conditional_mutual_information(t, 0, 1, 2) - conditional_mutual_information(t, 0, 2, 1)
    i_x_x1 = mutual_information(t.sum(axis=2))
    i_x_x2 = mutual_information(t.sum(axis=1))
    rhs = i_x_x1 - i_x_x2
    return MIChainAudit(lhs, rhs, abs(lhs - rhs), abs(lhs + rhs))
