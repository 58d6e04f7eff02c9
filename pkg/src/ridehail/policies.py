"""Decision policies the simulator consults at each epoch boundary."""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import ScenarioConfig, build_travel_matrix
from .mpc import (MpcInstance, SolveLimits, first_epoch_actions, make_instance,
                  solve_exact, solve_heuristic)


class MpcPolicy:
    """Solve the full-fidelity program each epoch and act on epoch 1."""

    needs_instance = True

    def __init__(self, solver: str = "heuristic", limits: SolveLimits | None = None):
        if solver not in ("heuristic", "exact"):
            raise ValueError("solver must be heuristic or exact")
        self.solver = solver
        self.limits = limits
        self.name = f"mpc-{solver}"
        self.last_solution = None

    def _solve(self, instance: MpcInstance, fixed_k=None):
        if self.solver == "exact":
            return solve_exact(instance, self.limits, fixed_k=fixed_k)
        return solve_heuristic(instance, self.limits, fixed_k=fixed_k)

    def decide(self, instance: MpcInstance, epoch: int):
        solution = self._solve(instance)
        self.last_solution = solution
        return first_epoch_actions(solution, instance.config)


class RelocationOnlyPolicy(MpcPolicy):
    """Pin gamma to 1 everywhere; serve best-effort and relocate only."""

    def __init__(self, solver: str = "heuristic", limits: SolveLimits | None = None):
        super().__init__(solver, limits)
        self.name = "relocation-only"

    def decide(self, instance: MpcInstance, epoch: int):
        relaxed = dataclasses.replace(instance, service_guarantee=False)
        solution = self._solve(relaxed, fixed_k=0)
        self.last_solution = solution
        gammas, plan = first_epoch_actions(solution, instance.config)
        return np.ones_like(gammas), plan


class NonePolicy:
    """Pure myopic routing: no pricing, no relocation."""

    needs_instance = False
    name = "none"

    def decide(self, instance, epoch: int):
        z = instance.zones
        return np.ones(z), np.zeros((z, z), dtype=np.int64)


class ClusteredMpcPolicy:
    """Lower-fidelity analog: solve on merged zones, expand actions back.

    merge_map[i] is the cluster id of zone i. Cluster pricing applies to every
    member; cluster-to-cluster relocations are assigned to member zones by
    cheapest travel time, donors capped by their idle counts and receivers
    weighted by first-epoch demand.
    """

    needs_instance = True

    def __init__(self, merge_map, solver: str = "heuristic",
                 limits: SolveLimits | None = None):
        self.merge_map = np.asarray(merge_map, dtype=np.int64)
        self.clusters = int(self.merge_map.max()) + 1
        if set(self.merge_map.tolist()) != set(range(self.clusters)):
            raise ValueError("merge map must use contiguous cluster ids")
        self.inner = MpcPolicy(solver, limits)
        self.name = "mpc-clustered"

    def _clustered_instance(self, instance: MpcInstance) -> MpcInstance:
        c = self.clusters
        z, t = instance.zones, instance.horizon
        members = [np.where(self.merge_map == a)[0] for a in range(c)]
        v_c = np.zeros((c, t), dtype=np.int64)
        d0_c = np.zeros((c, c, t), dtype=np.int64)
        for a in range(c):
            v_c[a] = instance.V[members[a]].sum(axis=0)
            for b in range(c):
                d0_c[a, b] = instance.D0[np.ix_(members[a], members[b])].sum(axis=(0, 1))
        coords = np.asarray(instance.config.layout())
        centroids = tuple((float(coords[m][:, 0].mean()),
                           float(coords[m][:, 1].mean())) for m in members)
        config_c = dataclasses.replace(instance.config, zone_count=c,
                                       zone_coords=centroids)
        travel_c = build_travel_matrix(config_c, config_c.epoch_seconds)
        return make_instance(v_c, d0_c, config_c, travel_c,
                             service_guarantee=instance.service_guarantee)

    def decide(self, instance: MpcInstance, epoch: int):
        clustered = self._clustered_instance(instance)
        solution = self.inner._solve(clustered)
        gammas_c, plan_c = first_epoch_actions(solution, clustered.config)
        gammas = gammas_c[self.merge_map]
        plan = self._expand_plan(instance, plan_c)
        return gammas, plan

    def _expand_plan(self, instance: MpcInstance, plan_c: np.ndarray) -> np.ndarray:
        z = instance.zones
        eta = instance.travel.eta
        idle_left = instance.V[:, 0].astype(np.int64).copy()
        demand_first = instance.D0[:, :, 0].sum(axis=1)
        plan = np.zeros((z, z), dtype=np.int64)
        for a in range(self.clusters):
            donors = [i for i in np.where(self.merge_map == a)[0]]
            for b in range(self.clusters):
                units = int(plan_c[a, b])
                if units == 0:
                    continue
                receivers = sorted(np.where(self.merge_map == b)[0],
                                   key=lambda j: (-demand_first[j], j))
                for u in range(units):
                    dest = int(receivers[u % len(receivers)])
                    avail = [i for i in donors if idle_left[i] > 0]
                    if not avail:
                        break   # cluster promised more than its idle supply
                    src = min(avail, key=lambda i: (eta[i, dest], i))
                    plan[src, dest] += 1
                    idle_left[src] -= 1
        return plan


def make_policy(name: str, config: ScenarioConfig, *, limits=None,
                merge_map=None, pricing_learner=None, reloc_learner=None,
                restoration_seed: int = 0):
    """Policy registry used by the experiment harness."""
    if name == "mpc-exact":
        return MpcPolicy("exact", limits)
    if name == "mpc-heuristic":
        return MpcPolicy("heuristic", limits)
    if name == "relocation-only":
        return RelocationOnlyPolicy("heuristic", limits)
    if name == "none":
        return NonePolicy()
    if name == "mpc-clustered":
        if merge_map is None:
            raise ValueError("mpc-clustered needs a merge map")
        return ClusteredMpcPolicy(merge_map, "heuristic", limits)
    if name == "proxy":
        from .proxy import ProxyPolicy
        if pricing_learner is None or reloc_learner is None:
            raise ValueError("proxy policy needs trained learners")
        travel = build_travel_matrix(config, config.epoch_seconds)
        return ProxyPolicy(pricing_learner, reloc_learner, config, travel,
                           restoration_seed=restoration_seed)
    raise ValueError(f"unknown policy {name!r}")
