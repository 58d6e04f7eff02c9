"""Budgeted heuristic and exact depth-first solvers for the MPC program.

Both solvers share a single in-epoch availability model: vehicles become
usable at V_it plus arrivals from finished services and relocations, leftover
supply carries to the next epoch, and a relocation out of a zone-epoch is only
legal when no kept demand covering that epoch remains unserved.

Relocations whose arrival epoch falls beyond the horizon are never enumerated:
they cost weight, relax nothing inside the horizon, and therefore cannot be
part of an optimal solution (the validator still accepts them).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import MpcInstance, MpcSolution, objective_of, weight_tables


@dataclass(frozen=True)
class SolveLimits:
    """Deterministic effort budgets: DFS nodes for the exact solver, greedy
    serve evaluations for the heuristic."""

    nodes: int = 2_000_000
    moves: int = 400


class _BudgetExceeded(Exception):
    pass


@dataclass
class _Tables:
    qp: np.ndarray
    qr: np.ndarray
    lam: np.ndarray
    horizon: int
    zones: int
    patience: int
    w: float
    mandatory_cut: int      # groups with t0 <= cut are hard-served (0-based)

    @classmethod
    def of(cls, instance: MpcInstance) -> "_Tables":
        qp, qr, _ = weight_tables(instance.config, instance.travel)
        t = instance.horizon
        s = instance.config.patience
        cut = t - s if instance.service_guarantee else -1
        return cls(qp=qp, qr=qr, lam=instance.travel.lam, horizon=t,
                   zones=instance.zones, patience=s,
                   w=instance.config.rideshare, mandatory_cut=cut)

    def deadline(self, t0: int) -> int:
        return min(self.horizon - 1, t0 + self.patience - 1)

    def is_mandatory(self, t0: int) -> bool:
        return t0 <= self.mandatory_cut


@dataclass
class _ServeOutcome:
    xp: np.ndarray
    carry: np.ndarray        # (Z, T) leftover idle supply per zone-epoch
    feasible: bool
    shortfalls: dict         # (zone, t0) -> unserved mandatory amount
    reloc_starved: list      # (zone, t) where xr exceeded supply
    gating_bad: list         # (zone, t) where relocation met leftover backlog
    unserved_opt: dict       # (zone, t0) -> optional demand left unserved
    late_served: set         # (zone, t0) groups with any service after t0
    objective: float


def _greedy_serve(instance: MpcInstance, tb: _Tables, v: np.ndarray,
                  xr: np.ndarray) -> _ServeOutcome:
    """Earliest-deadline-first service pass for a fixed pricing and relocation.

    Relocation departures are reserved before services; mandatory groups are
    served in deadline order, then optional groups in weight order.
    """
    z, t_max = tb.zones, tb.horizon
    rem = v.copy()
    xp = np.zeros((z, z, t_max, t_max), dtype=np.int64)
    arrivals = np.zeros((z, t_max), dtype=np.int64)
    for i in range(z):
        for j in range(z):
            shift = int(tb.lam[i, j])
            for tt in range(t_max - shift):
                arrivals[j, tt + shift] += int(xr[i, j, tt])
    carry = np.zeros((z, t_max), dtype=np.int64)
    shortfalls, unserved_opt = {}, {}
    reloc_starved, gating_bad = [], []
    late_served = set()
    feasible = True
    for t in range(t_max):
        prev = carry[:, t - 1] if t else np.zeros(z, dtype=np.int64)
        avail = instance.V[:, t] + prev + arrivals[:, t]
        for i in range(z):
            a = int(avail[i])
            reloc_out = int(xr[i, :, t].sum())
            if reloc_out > a:
                feasible = False
                reloc_starved.append((i, t))
                reloc_out = a
            a -= reloc_out
            t0_lo = max(0, t - tb.patience + 1)
            active = [(t0, j) for t0 in range(t0_lo, t + 1)
                      for j in range(z) if rem[i, j, t0] > 0]
            mandatory = sorted((g for g in active if tb.is_mandatory(g[0])),
                               key=lambda g: (tb.deadline(g[0]), g[0], g[1]))
            optional = sorted((g for g in active if not tb.is_mandatory(g[0])),
                              key=lambda g: (-tb.qp[g[0], t], g[0], g[1]))
            for t0, j in mandatory + optional:
                if a == 0:
                    break
                x = min(int(rem[i, j, t0]), a)
                if x == 0:
                    continue
                xp[i, j, t0, t] += x
                rem[i, j, t0] -= x
                a -= x
                if t > t0:
                    late_served.add((i, t0))
                land = t + int(tb.lam[i, j])
                if land < t_max:
                    arrivals[j, land] += x
            if reloc_out > 0:
                backlog = int(sum(rem[i, j, t0] for t0 in range(t0_lo, t + 1)
                                  for j in range(z)))
                if backlog > 0:
                    feasible = False
                    gating_bad.append((i, t))
            carry[i, t] = a
        for i in range(z):
            for t0 in range(t_max):
                if tb.deadline(t0) != t:
                    continue
                left = int(rem[i, :, t0].sum())
                if left == 0:
                    continue
                if tb.is_mandatory(t0):
                    feasible = False
                    shortfalls[(i, t0)] = left
                else:
                    unserved_opt[(i, t0)] = left
    objective = (float((xp.sum(axis=(0, 1)) * tb.qp).sum()) * tb.w
                 - float((xr * tb.qr).sum()))
    return _ServeOutcome(xp=xp, carry=carry, feasible=feasible,
                         shortfalls=shortfalls, reloc_starved=reloc_starved,
                         gating_bad=gating_bad, unserved_opt=unserved_opt,
                         late_served=late_served, objective=objective)


def _one_hot(k_choice: np.ndarray, n_mult: int) -> np.ndarray:
    z, t = k_choice.shape
    p = np.zeros((n_mult, z, t), dtype=np.int64)
    for i in range(z):
        for tt in range(t):
            p[k_choice[i, tt], i, tt] = 1
    return p


def _to_solution(instance: MpcInstance, k_choice: np.ndarray, xr: np.ndarray,
                 xp: np.ndarray, status: str, nodes: int) -> MpcSolution:
    v = instance.kept_demand(k_choice)
    return MpcSolution(p=_one_hot(k_choice, instance.config.n_multipliers),
                       xr=xr.copy(), xp=xp.copy(), v=v,
                       objective=objective_of(instance, xp, xr),
                       status=status, nodes_explored=nodes)


# ---------------------------------------------------------------------------
# heuristic
# ---------------------------------------------------------------------------

def _reloc_candidates(tb: _Tables, carry: np.ndarray, targets, cap=64):
    """(donor, dest, depart_epoch) triples that land a vehicle inside a target
    (zone, epoch) window, cheapest relocation first."""
    seen = set()
    cands = []
    for j, t_arr in targets:
        for d in range(tb.zones):
            if d == j:
                continue
            tau = t_arr - int(tb.lam[d, j])
            if tau < 0 or carry[d, tau] <= 0:
                continue
            key = (d, j, tau)
            if key in seen:
                continue
            seen.add(key)
            cands.append((float(tb.qr[d, j, tau]), d, j, tau))
    cands.sort()
    return [(d, j, tau) for _, d, j, tau in cands[:cap]]


def solve_heuristic(instance: MpcInstance, limits: SolveLimits | None = None,
                    fixed_k: int | None = None) -> MpcSolution:
    """Greedy multiplier descent plus first-improvement local search.

    Construction starts from gamma=1 everywhere and lowers the multiplier of
    the most oversubscribed zone-window, trying a one-unit relocation repair
    first. The all-priced-out assignment is the guaranteed-feasible fallback.
    Anytime: the best feasible incumbent is returned when the move budget runs
    out. fixed_k pins every pricing cell (used by the relocation-only policy).
    """
    limits = limits or SolveLimits()
    tb = _Tables.of(instance)
    z, t_max = tb.zones, tb.horizon
    n_k = instance.config.n_multipliers
    k_choice = np.full((z, t_max), 0 if fixed_k is None else fixed_k,
                       dtype=np.int64)
    xr = np.zeros((z, z, t_max), dtype=np.int64)
    evals = 0

    def run(k, rel):
        nonlocal evals
        evals += 1
        return _greedy_serve(instance, tb, instance.kept_demand(k), rel)

    res = run(k_choice, xr)
    while not res.feasible and evals < limits.moves:
        if res.reloc_starved or res.gating_bad:
            # an earlier repair broke supply or gating: drop one offending unit
            i, t = (res.reloc_starved + res.gating_bad)[0]
            dests = np.where(xr[i, :, t] > 0)[0]
            if dests.size:
                xr[i, dests[0], t] -= 1
            res = run(k_choice, xr)
            continue
        (zone, t0), amount = max(res.shortfalls.items(),
                                 key=lambda kv: (kv[1], -kv[0][1], -kv[0][0]))
        targets = [(zone, ta) for ta in range(t0, tb.deadline(t0) + 1)]
        repaired = False
        for d, j, tau in _reloc_candidates(tb, res.carry, targets):
            xr[d, j, tau] += 1
            trial = run(k_choice, xr)
            if (sum(trial.shortfalls.values()) < sum(res.shortfalls.values())
                    and not trial.reloc_starved and not trial.gating_bad):
                res = trial
                repaired = True
                break
            xr[d, j, tau] -= 1
            if evals >= limits.moves:
                break
        if repaired:
            continue
        if fixed_k is None and k_choice[zone, t0] < n_k - 1:
            k_choice[zone, t0] += 1
            res = run(k_choice, xr)
        else:
            break
    if not res.feasible:
        # guaranteed fallback: price out everything, no relocations
        if fixed_k is None:
            k_choice[:] = n_k - 1
            xr[:] = 0
            res = run(k_choice, xr)
        else:
            xr[:] = 0
            res = run(k_choice, xr)

    # first-improvement local search over pricing steps and single reloc units
    improved = True
    while improved and evals < limits.moves:
        improved = False
        for move in _moves(instance, tb, k_choice, xr, res, fixed_k):
            kind = move[0]
            if kind == "k":
                _, i, tt, dk = move
                k_choice[i, tt] += dk
                trial = run(k_choice, xr)
                if trial.feasible and trial.objective > res.objective + 1e-12:
                    res = trial
                    improved = True
                    break
                k_choice[i, tt] -= dk
            else:
                _, d, j, tau, du = move
                xr[d, j, tau] += du
                trial = run(k_choice, xr)
                if trial.feasible and trial.objective > res.objective + 1e-12:
                    res = trial
                    improved = True
                    break
                xr[d, j, tau] -= du
            if evals >= limits.moves:
                break
    return _to_solution(instance, k_choice, xr, res.xp, "budget-feasible", evals)


def _moves(instance: MpcInstance, tb: _Tables, k_choice, xr, res, fixed_k):
    z, t_max = tb.zones, tb.horizon
    n_k = instance.config.n_multipliers
    if fixed_k is None:
        for i in range(z):
            for tt in range(t_max):
                if k_choice[i, tt] > 0:
                    yield ("k", i, tt, -1)
        for i in range(z):
            for tt in range(t_max):
                if k_choice[i, tt] < n_k - 1:
                    yield ("k", i, tt, +1)
    for d, j, tau in zip(*np.where(xr > 0)):
        yield ("xr", int(d), int(j), int(tau), -1)
    targets = [(jz, ta) for (jz, t0) in res.unserved_opt
               for ta in range(t0, tb.deadline(t0) + 1)]
    targets += [(jz, t0) for (jz, t0) in sorted(res.late_served)]
    for d, j, tau in _reloc_candidates(tb, res.carry, targets):
        yield ("xr", d, j, tau, +1)


# ---------------------------------------------------------------------------
# exact depth-first search
# ---------------------------------------------------------------------------

def _compositions(caps, budget):
    """All integer vectors x with 0 <= x_k <= caps[k] and sum(x) <= budget."""
    if not caps:
        yield ()
        return
    head = caps[0]
    for x in range(min(head, budget) + 1):
        for rest in _compositions(caps[1:], budget - x):
            yield (x,) + rest


def _upper_bound(tb: _Tables, rem: np.ndarray, t: int) -> float:
    """Admissible: serve everything left at its earliest feasible epoch with
    unlimited vehicles and zero future relocation cost."""
    ub = 0.0
    z, t_max = tb.zones, tb.horizon
    for t0 in range(t_max):
        e = max(t, t0)
        if e > tb.deadline(t0):
            continue
        amount = int(rem[:, :, t0].sum())
        if amount:
            ub += tb.qp[t0, e] * tb.w * amount
    return ub


class _ExactSearch:
    def __init__(self, instance: MpcInstance, tb: _Tables, limits: SolveLimits):
        self.instance = instance
        self.tb = tb
        self.limits = limits
        self.nodes = 0
        self.best_obj = -np.inf
        self.best = None        # (k_choice, xr, xp)

    def tick(self):
        self.nodes += 1
        if self.nodes > self.limits.nodes:
            raise _BudgetExceeded

    def offer(self, k_choice, xr, xp, value):
        if value > self.best_obj + 1e-12:
            self.best_obj = value
            self.best = (k_choice.copy(), xr.copy(), xp.copy())

    def search_pricing(self, k_choice):
        tb = self.tb
        v = self.instance.kept_demand(k_choice)
        rem = v.copy()
        xr = np.zeros((tb.zones, tb.zones, tb.horizon), dtype=np.int64)
        xp = np.zeros((tb.zones, tb.zones, tb.horizon, tb.horizon), dtype=np.int64)
        arrivals = np.zeros((tb.zones, tb.horizon), dtype=np.int64)
        carry = np.zeros(tb.zones, dtype=np.int64)
        self._epoch(k_choice, 0, rem, xr, xp, arrivals, carry, 0.0)

    def _epoch(self, k_choice, t, rem, xr, xp, arrivals, carry, value):
        tb = self.tb
        if t == tb.horizon:
            self.offer(k_choice, xr, xp, value)
            return
        if value + _upper_bound(tb, rem, t) <= self.best_obj + 1e-12:
            return
        avail = self.instance.V[:, t] + arrivals[:, t] + carry
        self._zone(k_choice, t, 0, avail.astype(np.int64), rem, xr, xp,
                   arrivals, value)

    def _zone(self, k_choice, t, i, avail, rem, xr, xp, arrivals, value):
        tb = self.tb
        z = tb.zones
        if i == z:
            self._epoch(k_choice, t + 1, rem, xr, xp, arrivals, avail, value)
            return
        budget = int(avail[i])
        t0_lo = max(0, t - tb.patience + 1)
        active = [(t0, j) for t0 in range(t0_lo, t + 1)
                  for j in range(z) if rem[i, j, t0] > 0]
        forced = [(t0, j) for t0, j in active
                  if tb.is_mandatory(t0) and tb.deadline(t0) == t]
        forced_amt = int(sum(rem[i, j, t0] for t0, j in forced))
        if forced_amt > budget:
            return
        free = [g for g in active if g not in forced]
        final = t == tb.horizon - 1
        if final:
            options = [self._final_option(i, t, budget, forced, free, rem)]
        else:
            options = self._enumerate_options(i, t, budget, forced, free, rem)
        for serves, relocs, dvalue in options:
            self.tick()
            spent = 0
            for t0, j, x in serves:
                xp[i, j, t0, t] += x
                rem[i, j, t0] -= x
                land = t + int(tb.lam[i, j])
                if land < tb.horizon:
                    arrivals[j, land] += x
                spent += x
            for j, x in relocs:
                xr[i, j, t] += x
                arrivals[j, t + int(tb.lam[i, j])] += x
                spent += x
            old = avail[i]
            avail[i] = budget - spent
            self._zone(k_choice, t, i + 1, avail, rem, xr, xp, arrivals,
                       value + dvalue)
            avail[i] = old
            for t0, j, x in serves:
                xp[i, j, t0, t] -= x
                rem[i, j, t0] += x
                land = t + int(tb.lam[i, j])
                if land < tb.horizon:
                    arrivals[j, land] -= x
            for j, x in relocs:
                xr[i, j, t] -= x
                arrivals[j, t + int(tb.lam[i, j])] -= x

    def _final_option(self, i, t, budget, forced, free, rem):
        """Last epoch has no downstream coupling: serve forced amounts, then
        fill by unit weight, which is exactly optimal."""
        tb = self.tb
        serves = []
        left = budget
        dvalue = 0.0
        for t0, j in forced:
            x = int(rem[i, j, t0])
            serves.append((t0, j, x))
            dvalue += tb.qp[t0, t] * tb.w * x
            left -= x
        for t0, j in sorted(free, key=lambda g: (-tb.qp[g[0], t], g[0], g[1])):
            if left == 0:
                break
            x = min(int(rem[i, j, t0]), left)
            serves.append((t0, j, x))
            dvalue += tb.qp[t0, t] * tb.w * x
            left -= x
        return [(t0, j, x) for t0, j, x in serves if x > 0], [], dvalue

    def _enumerate_options(self, i, t, budget, forced, free, rem):
        """Joint service/relocation choices for zone i at epoch t, max-service
        first so the first DFS leaf is the greedy incumbent."""
        tb = self.tb
        base = [(t0, j, int(rem[i, j, t0])) for t0, j in forced]
        base_amt = sum(x for _, _, x in base)
        base_val = sum(tb.qp[t0, t] * tb.w * x for t0, j, x in base)
        left = budget - base_amt
        free = sorted(free, key=lambda g: (-tb.qp[g[0], t], g[0], g[1]))
        caps = [int(rem[i, j, t0]) for t0, j in free]
        dests = [j for j in range(tb.zones)
                 if j != i and t + int(tb.lam[i, j]) < tb.horizon]
        options = []
        for serve_vec in _compositions(caps, left):
            serves = list(base)
            dvalue = base_val
            used = base_amt
            backlog_left = 0
            for (t0, j), x in zip(free, serve_vec):
                if x:
                    serves.append((t0, j, x))
                    dvalue += tb.qp[t0, t] * tb.w * x
                    used += x
                backlog_left += int(rem[i, j, t0]) - x
            reloc_room = budget - used
            options.append((serves, [], dvalue))
            if reloc_room > 0 and backlog_left == 0 and dests:
                # relocation is gated on zero leftover backlog in this zone
                reloc_caps = [reloc_room] * len(dests)
                for reloc_vec in _compositions(reloc_caps, reloc_room):
                    total = sum(reloc_vec)
                    if total == 0:
                        continue
                    relocs = [(j, x) for j, x in zip(dests, reloc_vec) if x]
                    cost = sum(tb.qr[i, j, t] * x for j, x in relocs)
                    options.append((serves, relocs, dvalue - cost))
        options.sort(key=lambda o: -o[2])
        return options


def solve_exact(instance: MpcInstance, limits: SolveLimits | None = None,
                fixed_k: int | None = None) -> MpcSolution:
    """Optimal solution by DFS over pricing assignments and per-epoch flows.

    Pricing assignments are visited in decreasing order of an admissible value
    bound; within one assignment the search enumerates, epoch by epoch and
    zone by zone, every split of available vehicles among due services, early
    services, and relocations. A heuristic incumbent warm-starts the pruning.
    Exceeding the node budget returns the incumbent as budget-feasible.
    """
    limits = limits or SolveLimits()
    tb = _Tables.of(instance)
    z, t_max = tb.zones, tb.horizon
    n_k = instance.config.n_multipliers

    warm = solve_heuristic(instance, SolveLimits(moves=60), fixed_k=fixed_k)
    search = _ExactSearch(instance, tb, limits)
    search.best_obj = warm.objective
    search.best = (warm.k_choice(), warm.xr, warm.xp)

    cells = [(i, tt) for i in range(z) for tt in range(t_max)]
    # per-cell optimistic value of each multiplier choice
    cell_val = np.zeros((z, t_max, n_k))
    for i, tt in cells:
        for k in range(n_k):
            cell_val[i, tt, k] = tb.qp[tt, tt] * tb.w * int(
                instance.Dk[k, i, :, tt].sum())

    if fixed_k is not None:
        assignments = [np.full((z, t_max), fixed_k, dtype=np.int64)]
    else:
        assignments = []
        for flat in np.ndindex(*(n_k,) * len(cells)):
            k_choice = np.zeros((z, t_max), dtype=np.int64)
            ub = 0.0
            for (i, tt), k in zip(cells, flat):
                k_choice[i, tt] = k
                ub += cell_val[i, tt, k]
            assignments.append((ub, flat, k_choice))
        assignments.sort(key=lambda a: (-a[0], a[1]))
        assignments = [k for _, _, k in assignments]

    status = "optimal"
    try:
        for k_choice in assignments:
            search.tick()
            ub = sum(cell_val[i, tt, k_choice[i, tt]] for i, tt in cells)
            if ub <= search.best_obj + 1e-12:
                continue
            search.search_pricing(k_choice)
    except _BudgetExceeded:
        status = "budget-feasible"
    k_best, xr_best, xp_best = search.best
    return _to_solution(instance, k_best, xr_best, xp_best, status,
                        search.nodes)
