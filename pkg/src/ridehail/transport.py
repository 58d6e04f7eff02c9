"""Exact integral solver for the relocation-disaggregation transportation problem.

Zone margins (vehicles out, vehicles in) are routed over a complete bipartite
network whose diagonal carries a penalized self-loop cost, so the problem is
always feasible and an optimal vertex is integral.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import TravelMatrix

DUAL_TOL = 1e-9


def big_self_loop_cost(costs: np.ndarray) -> float:
    """Diagonal penalty 1 + |Z| * max off-diagonal cost: strictly dominates any
    off-diagonal routing, so self-loops absorb only unavoidable remnants."""
    z = costs.shape[0]
    if z == 1:
        return 1.0
    off = costs[~np.eye(z, dtype=bool)]
    return 1.0 + z * float(off.max())


@dataclass(frozen=True)
class TransportProblem:
    supplies: np.ndarray    # vehicles leaving each zone
    demands: np.ndarray     # vehicles entering each zone
    costs: np.ndarray       # c_ij >= 0, diagonal already penalized

    def __post_init__(self):
        supplies = np.asarray(self.supplies, dtype=np.int64)
        demands = np.asarray(self.demands, dtype=np.int64)
        costs = np.asarray(self.costs, dtype=float)
        z = supplies.shape[0]
        if demands.shape != (z,) or costs.shape != (z, z):
            raise ValueError("margin/cost shapes inconsistent")
        if np.any(supplies < 0) or np.any(demands < 0):
            raise ValueError("margins must be nonnegative")
        if np.any(costs < 0) or not np.all(np.isfinite(costs)):
            raise ValueError("costs must be finite and nonnegative")
        object.__setattr__(self, "supplies", supplies)
        object.__setattr__(self, "demands", demands)
        object.__setattr__(self, "costs", costs)

    @classmethod
    def from_travel(cls, supplies, demands, travel: TravelMatrix) -> "TransportProblem":
        costs = travel.eta.copy()
        np.fill_diagonal(costs, 0.0)
        np.fill_diagonal(costs, big_self_loop_cost(costs))
        return cls(supplies, demands, costs)

    @property
    def zone_count(self) -> int:
        return self.supplies.shape[0]


def plan_cost(problem: TransportProblem, plan: np.ndarray) -> float:
    return float((problem.costs * plan).sum())


def solve_transport(problem: TransportProblem) -> np.ndarray:
    """Cost-minimal integral plan via successive shortest paths with potentials.

    Rejects unbalanced margins: balancing is the restoration step's job, so an
    imbalance here is an upstream bug, not a recoverable condition.
    """
    if int(problem.supplies.sum()) != int(problem.demands.sum()):
        raise ValueError("unbalanced margins: total out != total in")
    z = problem.zone_count
    plan = np.zeros((z, z), dtype=np.int64)
    remaining_s = problem.supplies.astype(np.int64).copy()
    remaining_d = problem.demands.astype(np.int64).copy()
    if remaining_s.sum() == 0:
        return plan
    costs = problem.costs
    # node ids: suppliers 0..z-1, consumers z..2z-1
    pot = np.zeros(2 * z)
    while remaining_s.sum() > 0:
        # Dijkstra over the residual bipartite graph with reduced costs
        dist = np.full(2 * z, np.inf)
        parent = np.full(2 * z, -1, dtype=np.int64)
        heap = []
        for i in range(z):
            if remaining_s[i] > 0:
                dist[i] = 0.0
                heapq.heappush(heap, (0.0, i))
        while heap:
            d, node = heapq.heappop(heap)
            if d > dist[node] + 1e-15:
                continue
            if node < z:
                i = node
                for j in range(z):
                    rc = costs[i, j] + pot[i] - pot[z + j]
                    nd = d + rc
                    if nd < dist[z + j] - 1e-15:
                        dist[z + j] = nd
                        parent[z + j] = node
                        heapq.heappush(heap, (nd, z + j))
            else:
                j = node - z
                for i in range(z):
                    if plan[i, j] > 0:
                        rc = -costs[i, j] + pot[z + j] - pot[i]
                        nd = d + rc
                        if nd < dist[i] - 1e-15:
                            dist[i] = nd
                            parent[i] = node
                            heapq.heappush(heap, (nd, i))
        targets = [z + j for j in range(z) if remaining_d[j] > 0
                   and np.isfinite(dist[z + j])]
        if not targets:
            raise RuntimeError("no augmenting path on a balanced instance")
        end = min(targets, key=lambda n: dist[n])
        # bottleneck along the path
        path = []
        node = end
        while parent[node] != -1:
            path.append((parent[node], node))
            node = parent[node]
        start = node
        bottleneck = min(remaining_s[start], remaining_d[end - z])
        for u, v in path:
            if u >= z:  # backward arc (consumer -> supplier) undoes plan flow
                bottleneck = min(bottleneck, plan[v, u - z])
        for u, v in reversed(path):
            if u < z:
                plan[u, v - z] += bottleneck
            else:
                plan[v, u - z] -= bottleneck
        remaining_s[start] -= bottleneck
        remaining_d[end - z] -= bottleneck
        finite = np.isfinite(dist)
        pot[finite] += dist[finite]
    return plan


def _feasible(problem: TransportProblem, plan: np.ndarray) -> bool:
    plan = np.asarray(plan)
    if plan.shape != problem.costs.shape:
        return False
    if np.any(plan < 0) or np.any(plan != np.round(plan)):
        return False
    return (np.array_equal(plan.sum(axis=1), problem.supplies)
            and np.array_equal(plan.sum(axis=0), problem.demands))


def certify_optimality(problem: TransportProblem, plan: np.ndarray) -> bool:
    """Independent optimality certificate via residual-graph duals.

    Bellman-Ford potentials over the residual network give dual values; the
    plan is optimal iff no negative-reduced-cost cycle exists, which for a
    transportation polytope is exactly dual feasibility plus complementary
    slackness within DUAL_TOL.
    """
    if not _feasible(problem, plan):
        return False
    z = problem.zone_count
    plan = np.asarray(plan, dtype=np.int64)
    costs = problem.costs
    # virtual source at distance 0 to every node; Jacobi-style relaxation
    u = np.zeros(z)
    v = np.zeros(z)
    back = np.where(plan > 0, -costs, np.inf)
    converged = False
    for _ in range(2 * (2 * z) + 2):
        new_v = np.minimum(v, (u[:, None] + costs).min(axis=0))
        new_u = np.minimum(u, (v[None, :] + back).min(axis=1))
        if np.all(v - new_v <= DUAL_TOL) and np.all(u - new_u <= DUAL_TOL):
            converged = True
            break
        u, v = new_u, new_v
    if not converged:
        return False  # still relaxing: negative-reduced-cost cycle exists
    reduced = costs + u[:, None] - v[None, :]
    if np.any(reduced < -DUAL_TOL):
        return False
    return not np.any((plan > 0) & (np.abs(reduced) > DUAL_TOL))


def dump_transport(problem: TransportProblem, plan: np.ndarray, path):
    with open(path, "w") as fh:
        fh.write("# transport_dump_schema=1\n")
        fh.write("supplies " + " ".join(map(str, problem.supplies)) + "\n")
        fh.write("demands " + " ".join(map(str, problem.demands)) + "\n")
        fh.write(f"cost {plan_cost(problem, plan)!r}\n")
        for row in np.asarray(plan):
            fh.write(" ".join(map(str, row)) + "\n")
