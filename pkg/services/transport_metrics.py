"""
Exact Wasserstein-1 distances between discrete phase-space measures under the
shifted norms |(r, v)|_t = |r - t v| + |v|.
"""
import itertools
import logging
from typing import Optional, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from common.errors import CapacityError, InvalidArgumentError, LabError
from common.utils import row_norm
from config import settings
from services.particle_system import Ensemble

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 8


class DiscreteMeasure(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    r: np.ndarray
    v: np.ndarray
    weights: np.ndarray

    @field_validator("r", "v", "weights", mode="before")
    @classmethod
    def _as_float(cls, value) -> np.ndarray:
        return np.asarray(value, dtype=float)

    @model_validator(mode="after")
    def _check(self) -> "DiscreteMeasure":
        if self.r.ndim != 2 or self.r.shape != self.v.shape:
            raise InvalidArgumentError("positions and velocities must share shape (n, d)")
        if self.weights.shape != (self.r.shape[0],):
            raise InvalidArgumentError("one weight per atom is required")
        if np.any(self.weights < 0.0):
            raise InvalidArgumentError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > settings.ALGEBRAIC_TOL:
            raise InvalidArgumentError("weights must sum to 1", total=float(self.weights.sum()))
        return self

    @classmethod
    def uniform(cls, r, v) -> "DiscreteMeasure":
        r = np.asarray(r, dtype=float)
        n = r.shape[0]
        return cls(r=r, v=v, weights=np.full(n, 1.0 / n))

    @classmethod
    def from_ensemble(cls, e: Ensemble) -> "DiscreteMeasure":
        return cls.uniform(e.r.copy(), e.v.copy())

    @property
    def size(self) -> int:
        return int(self.r.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.r.shape[1])

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))


class Coupling(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    plan: np.ndarray

    def marginal_error(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        if self.plan.shape != (mu.size, nu.size):
            raise InvalidArgumentError("coupling shape does not match the measures",
                                       shape=list(self.plan.shape), expected=[mu.size, nu.size])
        rows = np.abs(self.plan.sum(axis=1) - mu.weights).max()
        cols = np.abs(self.plan.sum(axis=0) - nu.weights).max()
        return float(max(rows, cols))


class TransportResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    value: float
    coupling: Coupling


def cost_t(p: Tuple[np.ndarray, np.ndarray], q: Tuple[np.ndarray, np.ndarray], t: float = 0.0) -> float:
    """|(r - v t) - (r~ - v~ t)| + |v - v~|."""
    r, v = (np.asarray(x, dtype=float) for x in p)
    rq, vq = (np.asarray(x, dtype=float) for x in q)
    if not (r.shape == v.shape == rq.shape == vq.shape):
        raise InvalidArgumentError("phase points must share the dimension")
    return float(row_norm((r - t * v) - (rq - t * vq)) + row_norm(v - vq))


def shift_measure(m: DiscreteMeasure, t: float) -> DiscreteMeasure:
    """Pushforward of m under (r, v) -> (r - t v, v)."""
    return DiscreteMeasure(r=m.r - t * m.v, v=m.v.copy(), weights=m.weights.copy())


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, t: float = 0.0) -> np.ndarray:
    if mu.dimension != nu.dimension:
        raise InvalidArgumentError("measures live in different dimensions", d_mu=mu.dimension, d_nu=nu.dimension)
    return cdist(mu.r - t * mu.v, nu.r - t * nu.v) + cdist(mu.v, nu.v)


def _check_capacity(mu: DiscreteMeasure, nu: DiscreteMeasure, max_support: Optional[int]) -> None:
    limit = settings.MAX_SUPPORT if max_support is None else max_support
    if max(mu.size, nu.size) > limit:
        raise CapacityError("support exceeds the configured maximum", size=max(mu.size, nu.size), limit=limit)


def _solve_assignment(cost: np.ndarray) -> TransportResult:
    n = cost.shape[0]
    rows, cols = linear_sum_assignment(cost)
    plan = np.zeros_like(cost)
    plan[rows, cols] = 1.0 / n
    return TransportResult(value=float(cost[rows, cols].sum() / n), coupling=Coupling(plan=plan))


def _solve_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> TransportResult:
    n, m = cost.shape
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    # the last column constraint is implied by the others
    A_eq = sparse.vstack([rows, cols.tocsr()[:-1]]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    result = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if result.status != 0:
        logger.error("Transport LP failed: %s", result.message)
        raise LabError("transport LP did not reach optimality", status=int(result.status))
    plan = np.clip(result.x.reshape(n, m), 0.0, None)
    return TransportResult(value=float((plan * cost).sum()), coupling=Coupling(plan=plan))


def w1(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: Optional[np.ndarray] = None,
    max_support: Optional[int] = None,
) -> TransportResult:
    """Optimal transport value and coupling; the cost defaults to |.|_0."""
    _check_capacity(mu, nu, max_support)
    if cost is None:
        cost = cost_matrix(mu, nu, 0.0)
    if cost.shape != (mu.size, nu.size):
        raise InvalidArgumentError("cost matrix shape does not match the measures")
    if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
        return _solve_assignment(cost)
    return _solve_lp(cost, mu.weights, nu.weights)


def w1_shifted(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    t: float,
    max_support: Optional[int] = None,
) -> TransportResult:
    """W1 under |.|_t, cross-checked against W1 of the shifted measures under |.|_0."""
    direct = w1(mu, nu, cost_matrix(mu, nu, t), max_support=max_support)
    shifted = w1(shift_measure(mu, t), shift_measure(nu, t), max_support=max_support)
    gap = abs(direct.value - shifted.value)
    if gap > settings.COMPOSED_TOL * max(1.0, direct.value):
        logger.error("Shifted distance routes disagree at t=%s: %s vs %s", t, direct.value, shifted.value)
        raise LabError("shifted W1 routes disagree", t=t, cost_route=direct.value, shift_route=shifted.value)
    return direct


def paired_w1_shifted(mu: DiscreteMeasure, nu: DiscreteMeasure, t: float) -> float:
    """Cost of the identity pairing of atoms, an upper bound for W1 under |.|_t."""
    if mu.size != nu.size or not np.array_equal(mu.weights, nu.weights):
        raise InvalidArgumentError("paired distance needs atom-by-atom matched measures")
    costs = row_norm((mu.r - t * mu.v) - (nu.r - t * nu.v)) + row_norm(mu.v - nu.v)
    return float((mu.weights * costs).sum())


def brute_force_w1(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: Optional[np.ndarray] = None) -> float:
    """Minimum over all n! assignments, for equal-size uniform measures."""
    if mu.size != nu.size or not (mu.is_uniform and nu.is_uniform):
        raise InvalidArgumentError("brute force needs equal-size uniform measures")
    n = mu.size
    if n > BRUTE_FORCE_LIMIT:
        raise CapacityError("brute force limited to 8 atoms", size=n, limit=BRUTE_FORCE_LIMIT)
    if cost is None:
        cost = cost_matrix(mu, nu, 0.0)
    rows = np.arange(n)
    return min(float(cost[rows, list(perm)].sum() / n) for perm in itertools.permutations(range(n)))


class DualCertificate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    primal: float
    dual: float
    gap: float
    lipschitz_violation: float
    potential_mu: np.ndarray
    potential_nu: np.ndarray
    coupling_optimal: bool


def _potential(dist: np.ndarray, n: int, support: np.ndarray, tol: float) -> np.ndarray:
    # Difference constraints psi(b) - psi(a) <= w(a -> b) solved by shortest paths from a virtual source.
    size = dist.shape[0]
    graph = nx.DiGraph()
    graph.add_nodes_from(range(size + 1))
    source = size
    for node in range(size):
        graph.add_edge(source, node, weight=0.0)
    for a in range(size):
        for b in range(size):
            if a != b:
                graph.add_edge(a, b, weight=float(dist[a, b]))
    for i, j in zip(*np.nonzero(support)):
        graph.add_edge(int(i), n + int(j), weight=float(-dist[i, n + j] + tol))
    lengths = nx.single_source_bellman_ford_path_length(graph, source)
    return np.array([lengths[node] for node in range(size)])


def dual_check(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    coupling: Coupling,
    t: float = 0.0,
) -> DualCertificate:
    """Kantorovich potential tight on the coupling support, with primal and dual values."""
    error = coupling.marginal_error(mu, nu)
    if error > settings.MARGINAL_TOL or np.any(coupling.plan < -settings.ALGEBRAIC_TOL):
        raise InvalidArgumentError("coupling is not feasible", marginal_error=error)
    union = DiscreteMeasure(
        r=np.concatenate([mu.r, nu.r]),
        v=np.concatenate([mu.v, nu.v]),
        weights=np.concatenate([mu.weights, nu.weights]) / 2.0,
    )
    dist = cost_matrix(union, union, t)
    n = mu.size
    primal = float((coupling.plan * dist[:n, n:]).sum())
    tol = 1e-11 * max(1.0, float(dist.max()))

    optimal = True
    try:
        psi = _potential(dist, n, coupling.plan > 0.0, tol)
    except nx.NetworkXUnbounded:
        optimal = False
        logger.warning("Coupling is not optimal; certificate built from an optimal coupling instead")
        best = w1(mu, nu, dist[:n, n:])
        psi = _potential(dist, n, best.coupling.plan > 0.0, tol)

    dual = float((mu.weights * psi[:n]).sum() - (nu.weights * psi[n:]).sum())
    violation = float((psi[:, None] - psi[None, :] - dist).max())
    return DualCertificate(
        primal=primal,
        dual=dual,
        gap=primal - dual,
        lipschitz_violation=max(violation, 0.0),
        potential_mu=psi[:n],
        potential_nu=psi[n:],
        coupling_optimal=optimal,
    )
