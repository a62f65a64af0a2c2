"""Evaluation metrics for weighted particle sets.

``w2_exact`` solves the discrete optimal-transport problem between two
weighted point sets exactly (squared-Euclidean ground cost, LP solved to
optimality) and reports the 2-Wasserstein distance with the transport plan.
``w2_bruteforce`` solves the same problem for tiny instances by enumerating
every spanning-tree basis of the bipartite transport graph; it exists as an
independent cross-check. ``ksd_squared`` is the Stein-kernel quadratic form
of a weighted measure, and ``component_mass`` reports how a measure's mass
splits across mixture components.
"""

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .kernels import median_bandwidth, stein_gram

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "w2_exact",
    "w2_bruteforce",
    "ksd_squared",
    "component_mass",
]

MAX_COST_CELLS = 2_000_000
MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set: atoms (n, d) with nonnegative masses summing to 1."""

    atoms: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        masses = np.asarray(self.masses, dtype=float).ravel()
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "masses", masses)
        if masses.shape[0] != atoms.shape[0]:
            raise ValueError("one mass per atom required")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(masses))):
            raise ValueError("measure entries must be finite")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        if abs(masses.sum() - 1.0) > 1e-10:
            raise ValueError("masses must sum to 1 within 1e-10")

    @classmethod
    def from_samples(cls, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def from_ensemble(cls, ensemble):
        return cls(ensemble.positions, ensemble.weights)


@dataclass(frozen=True)
class TransportPlan:
    """Sparse optimal plan: parallel arrays of (source, target, mass)."""

    source_index: np.ndarray
    target_index: np.ndarray
    mass: np.ndarray
    objective: float


def _drop_zeros(measure):
    keep = measure.masses > 0.0
    if np.all(keep):
        return measure.atoms, measure.masses, np.arange(measure.masses.size)
    idx = np.flatnonzero(keep)
    return measure.atoms[idx], measure.masses[idx], idx


def w2_exact(mu, nu):
    """Exact 2-Wasserstein distance between two discrete measures.

    Solves  min sum_ij plan_ij ||x_i - y_j||^2  subject to the plan's row and
    column marginals matching the two mass vectors, as a linear program solved
    to optimality. Atoms with exactly zero mass are dropped first.

    Returns:
        (distance, TransportPlan) with distance = sqrt(optimal objective).
    """
    x, a, ia = _drop_zeros(mu)
    y, b, ib = _drop_zeros(nu)
    n, m = a.size, b.size
    if x.shape[1] != y.shape[1]:
        raise ValueError("measures live in different dimensions")
    if n * m > MAX_COST_CELLS:
        raise ValueError(
            f"cost matrix would have {n * m} cells (> {MAX_COST_CELLS}); subsample the measures"
        )

    cost = cdist(x, y, "sqeuclidean")

    # equality constraints: row sums = a, column sums = b
    var = np.arange(n * m)
    rows_r = np.repeat(np.arange(n), m)
    rows_c = n + np.tile(np.arange(m), n)
    A = sparse.csr_matrix(
        (np.ones(2 * n * m), (np.concatenate([rows_r, rows_c]), np.concatenate([var, var]))),
        shape=(n + m, n * m),
    )
    rhs = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")

    plan = res.x.reshape(n, m)
    row_err = np.max(np.abs(plan.sum(axis=1) - a))
    col_err = np.max(np.abs(plan.sum(axis=0) - b))
    if max(row_err, col_err) > MARGINAL_TOL:
        raise RuntimeError(
            f"transport plan marginals off by {max(row_err, col_err):.2e} (> {MARGINAL_TOL})"
        )

    si, ti = np.nonzero(plan > 0)
    objective = float(np.sum(plan * cost))
    return (
        float(np.sqrt(max(objective, 0.0))),
        TransportPlan(
            source_index=ia[si], target_index=ib[ti], mass=plan[si, ti], objective=objective
        ),
    )


@lru_cache(maxsize=None)
def _tree_bases(n, m):
    """All spanning trees of the complete bipartite transport graph K_{n,m},
    each precompiled into a leaf-elimination schedule.

    A schedule is a tuple of (row, col, leaf_is_row) triples in elimination
    order: the flow on edge (row, col) equals the remaining supply (demand) of
    the leaf node, which is then charged to the other endpoint.
    """
    nodes = n + m
    edges = [(i, j) for i in range(n) for j in range(m)]
    schedules = []
    for subset in itertools.combinations(range(len(edges)), nodes - 1):
        parent = list(range(nodes))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        acyclic = True
        for e in subset:
            i, j = edges[e]
            ri, rj = find(i), find(n + j)
            if ri == rj:
                acyclic = False
                break
            parent[ri] = rj
        if not acyclic:
            continue

        # leaf elimination order (tree with nodes-1 edges spans all nodes)
        degree = [0] * nodes
        incident = [[] for _ in range(nodes)]
        for e in subset:
            i, j = edges[e]
            degree[i] += 1
            degree[n + j] += 1
            incident[i].append(e)
            incident[n + j].append(e)
        alive = [True] * len(edges)
        leaves = [v for v in range(nodes) if degree[v] == 1]
        schedule = []
        while leaves:
            v = leaves.pop()
            if degree[v] != 1:
                continue  # became isolated when its partner edge was stripped
            e = next(e for e in incident[v] if alive[e])
            alive[e] = False
            i, j = edges[e]
            other = n + j if v == i else i
            schedule.append((i, j, v == i))
            degree[v] -= 1
            degree[other] -= 1
            if degree[other] == 1:
                leaves.append(other)
        schedules.append(tuple(schedule))
    return tuple(schedules)


def w2_bruteforce(mu, nu):
    """Exact W2 for tiny instances by enumerating transport-polytope vertices.

    Every vertex of the transportation polytope is supported on a spanning
    forest; minimizing the cost over all feasible spanning-tree bases
    therefore recovers the LP optimum. Restricted to n, m <= 4.
    """
    x, a, _ = _drop_zeros(mu)
    y, b, _ = _drop_zeros(nu)
    n, m = a.size, b.size
    if n > 4 or m > 4:
        raise ValueError("w2_bruteforce is limited to measures with <= 4 atoms")
    cost = cdist(x, y, "sqeuclidean")

    best = None
    for schedule in _tree_bases(n, m):
        rem_a = a.copy()
        rem_b = b.copy()
        total = 0.0
        feasible = True
        for i, j, leaf_is_row in schedule:
            flow = rem_a[i] if leaf_is_row else rem_b[j]
            if flow < -1e-12:
                feasible = False
                break
            if leaf_is_row:
                rem_a[i] = 0.0
                rem_b[j] -= flow
            else:
                rem_b[j] = 0.0
                rem_a[i] -= flow
            total += flow * cost[i, j]
        if feasible and (best is None or total < best):
            best = total
    if best is None:
        raise RuntimeError("no feasible transport basis found (marginals inconsistent?)")
    return float(np.sqrt(max(best, 0.0)))


def ksd_squared(target, measure, h=None):
    """Squared kernel Stein discrepancy of a weighted measure against the target.

    Uses the median-heuristic bandwidth on the measure's atoms unless ``h``
    is supplied. Slightly negative round-off is clamped to zero.
    """
    if h is None:
        h = median_bandwidth(measure.atoms)
    gram = stein_gram(target, measure.atoms, h)
    value = float(measure.masses @ gram @ measure.masses)
    return max(value, 0.0)


def component_mass(mixture, measure):
    """Mass assigned to each mixture component by maximum responsibility."""
    resp = mixture.responsibilities(measure.atoms)
    labels = np.argmax(resp, axis=1)
    return np.bincount(labels, weights=measure.masses, minlength=mixture.n_components)
