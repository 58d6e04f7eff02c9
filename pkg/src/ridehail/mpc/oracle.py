"""Exhaustive micro-scale optimum by flat enumeration.

Deliberately unshared with the DFS solver: every pricing assignment is visited
in index order, every feasible per-epoch allocation is generated without value
bounds or last-epoch shortcuts, and leaf objectives are recomputed from the
flow arrays. Only suitable for micro instances (a couple of zones and epochs).
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import MpcInstance, MpcSolution, objective_of
from .solvers import _Tables, _compositions, _one_hot


def _zone_choices(tb: _Tables, instance, i, t, budget, rem):
    """Every feasible (serves, relocs) pair for zone i at epoch t."""
    z = tb.zones
    t0_lo = max(0, t - tb.patience + 1)
    active = [(t0, j) for t0 in range(t0_lo, t + 1)
              for j in range(z) if rem[i, j, t0] > 0]
    forced = [(t0, j) for t0, j in active
              if tb.is_mandatory(t0) and tb.deadline(t0) == t]
    free = [g for g in active if g not in forced]
    forced_amt = int(sum(rem[i, j, t0] for t0, j in forced))
    if forced_amt > budget:
        return
    dests = [j for j in range(z) if j != i and t + int(tb.lam[i, j]) < tb.horizon]
    caps = [int(rem[i, j, t0]) for t0, j in free]
    for serve_vec in _compositions(caps, budget - forced_amt):
        serves = [(t0, j, int(rem[i, j, t0])) for t0, j in forced]
        serves += [(t0, j, x) for (t0, j), x in zip(free, serve_vec) if x]
        used = forced_amt + sum(serve_vec)
        backlog = sum(int(rem[i, j, t0]) for t0, j in free) - sum(serve_vec)
        yield serves, []
        room = budget - used
        if room > 0 and backlog == 0 and dests:
            for reloc_vec in _compositions([room] * len(dests), room):
                if sum(reloc_vec) == 0:
                    continue
                yield serves, [(j, x) for j, x in zip(dests, reloc_vec) if x]


def enumerate_optimum(instance: MpcInstance) -> MpcSolution:
    """Brute-force optimal solution; raises if the search space is not micro."""
    tb = _Tables.of(instance)
    z, t_max = tb.zones, tb.horizon
    n_k = instance.config.n_multipliers
    if n_k ** (z * t_max) > 100_000:
        raise ValueError("instance too large for exhaustive enumeration")

    best = {"obj": -np.inf, "k": None, "xr": None, "xp": None}

    def walk(t, rem, xr, xp, arrivals, carry, k_choice):
        if t == t_max:
            obj = objective_of(instance, xp, xr)
            if obj > best["obj"]:
                best.update(obj=obj, k=k_choice.copy(), xr=xr.copy(),
                            xp=xp.copy())
            return
        avail = instance.V[:, t] + arrivals[:, t] + carry

        def per_zone(i, leftover):
            if i == z:
                walk(t + 1, rem, xr, xp, arrivals, leftover.copy(), k_choice)
                return
            for serves, relocs in _zone_choices(tb, instance, i, t,
                                                int(avail[i]), rem):
                spent = 0
                for t0, j, x in serves:
                    xp[i, j, t0, t] += x
                    rem[i, j, t0] -= x
                    land = t + int(tb.lam[i, j])
                    if land < t_max:
                        arrivals[j, land] += x
                    spent += x
                for j, x in relocs:
                    xr[i, j, t] += x
                    arrivals[j, t + int(tb.lam[i, j])] += x
                    spent += x
                leftover[i] = avail[i] - spent
                per_zone(i + 1, leftover)
                for t0, j, x in serves:
                    xp[i, j, t0, t] -= x
                    rem[i, j, t0] += x
                    land = t + int(tb.lam[i, j])
                    if land < t_max:
                        arrivals[j, land] -= x
                for j, x in relocs:
                    xr[i, j, t] -= x
                    arrivals[j, t + int(tb.lam[i, j])] -= x

        per_zone(0, np.zeros(z, dtype=np.int64))

    for flat in itertools.product(range(n_k), repeat=z * t_max):
        k_choice = np.asarray(flat, dtype=np.int64).reshape(z, t_max)
        rem = instance.kept_demand(k_choice)
        walk(0,
             rem,
             np.zeros((z, z, t_max), dtype=np.int64),
             np.zeros((z, z, t_max, t_max), dtype=np.int64),
             np.zeros((z, t_max), dtype=np.int64),
             np.zeros(z, dtype=np.int64),
             k_choice)

    sol = MpcSolution(p=_one_hot(best["k"], n_k), xr=best["xr"], xp=best["xp"],
                      v=instance.kept_demand(best["k"]),
                      objective=float(best["obj"]), status="optimal")
    return sol
