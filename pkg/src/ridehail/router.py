"""Batched myopic routing: enumerate capacity-2 candidate routes per idle
vehicle and pick an exact minimum of waiting cost plus unserved penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ScenarioConfig, TravelMatrix

_BIG = 1e15
_PAIR_REQUEST_CAP = 16      # pair enumeration only over the most urgent requests


@dataclass(frozen=True)
class CandidateRoute:
    vehicle_id: int
    request_ids: tuple
    pickups: tuple           # pickup time per request, aligned with request_ids
    completion: float
    final_zone: int
    cost: float              # summed waiting seconds


def _detour_ok(in_vehicle: float, direct: float, factor: float) -> bool:
    return in_vehicle <= factor * direct + 1e-9


def enumerate_routes(vehicle_zone: int, vehicle_id: int, now: float, requests,
                     config: ScenarioConfig, travel: TravelMatrix,
                     allow_pairs: bool) -> list[CandidateRoute]:
    """Feasible single and two-pickup routes for one idle vehicle.

    Feasibility: pickups inside each rider's pickup-patience window, onboard
    riders within capacity, and shared riders within the detour bound.
    """
    eta = travel.eta
    patience_s = config.pickup_patience_epochs * config.epoch_seconds
    routes = []
    singles = {}
    for r in requests:
        pu = now + eta[vehicle_zone, r.origin]
        if pu > r.time_s + patience_s + 1e-9 or r.riders > config.vehicle_capacity:
            continue
        cost = pu - r.time_s
        routes.append(CandidateRoute(vehicle_id, (r.id,), (pu,),
                                     pu + eta[r.origin, r.dest], r.dest, cost))
        singles[r.id] = r
    if not allow_pairs or len(singles) < 2:
        return routes
    cand = sorted(singles.values(), key=lambda r: (-r.penalty, r.time_s, r.id))
    cand = cand[:_PAIR_REQUEST_CAP]
    factor = config.detour_factor
    for r1 in cand:
        for r2 in cand:
            if r1.id == r2.id:
                continue
            pu1 = now + eta[vehicle_zone, r1.origin]
            pu2 = pu1 + eta[r1.origin, r2.origin]
            if (pu1 > r1.time_s + patience_s + 1e-9
                    or pu2 > r2.time_s + patience_s + 1e-9):
                continue
            if r1.riders + r2.riders <= config.vehicle_capacity:
                # drop r1 first, then r2
                do1 = pu2 + eta[r2.origin, r1.dest]
                do2 = do1 + eta[r1.dest, r2.dest]
                if (_detour_ok(do1 - pu1, eta[r1.origin, r1.dest], factor)
                        and _detour_ok(do2 - pu2, eta[r2.origin, r2.dest], factor)):
                    routes.append(CandidateRoute(
                        vehicle_id, (r1.id, r2.id), (pu1, pu2), do2,
                        r2.dest, (pu1 - r1.time_s) + (pu2 - r2.time_s)))
                # drop r2 first, then r1
                do2 = pu2 + eta[r2.origin, r2.dest]
                do1 = do2 + eta[r2.dest, r1.dest]
                if (_detour_ok(do2 - pu2, eta[r2.origin, r2.dest], factor)
                        and _detour_ok(do1 - pu1, eta[r1.origin, r1.dest], factor)):
                    routes.append(CandidateRoute(
                        vehicle_id, (r1.id, r2.id), (pu1, pu2), do1,
                        r1.dest, (pu1 - r1.time_s) + (pu2 - r2.time_s)))
            if max(r1.riders, r2.riders) <= config.vehicle_capacity:
                # chain: serve r1 completely, then pick up r2
                do1 = pu1 + eta[r1.origin, r1.dest]
                pu2c = do1 + eta[r1.dest, r2.origin]
                if pu2c <= r2.time_s + patience_s + 1e-9:
                    routes.append(CandidateRoute(
                        vehicle_id, (r1.id, r2.id), (pu1, pu2c),
                        pu2c + eta[r2.origin, r2.dest], r2.dest,
                        (pu1 - r1.time_s) + (pu2c - r2.time_s)))
    return routes


def select_routes_dfs(routes_by_vehicle: dict, requests) -> tuple[list, float]:
    """Exact selection: at most one route per vehicle, each request on at most
    one route, minimizing route cost plus penalties of unserved requests."""
    penalties = {r.id: r.penalty for r in requests}
    best_wait = {r.id: r.penalty for r in requests}
    for routes in routes_by_vehicle.values():
        for route in routes:
            for rid, pu in zip(route.request_ids, route.pickups):
                req = next(r for r in requests if r.id == rid)
                best_wait[rid] = min(best_wait[rid], pu - req.time_s)
    vehicle_ids = sorted(routes_by_vehicle)
    incumbent = {"cost": float("inf"), "picks": []}

    def bound(unserved) -> float:
        return sum(min(penalties[rid], best_wait[rid]) for rid in unserved)

    def walk(idx, served, cost, picks):
        if cost + bound(set(penalties) - served) >= incumbent["cost"] - 1e-12:
            return
        if idx == len(vehicle_ids):
            total = cost + sum(p for rid, p in penalties.items()
                               if rid not in served)
            if total < incumbent["cost"] - 1e-12:
                incumbent["cost"] = total
                incumbent["picks"] = list(picks)
            return
        vid = vehicle_ids[idx]
        options = sorted(routes_by_vehicle[vid], key=lambda r: r.cost)
        for route in options:
            if any(rid in served for rid in route.request_ids):
                continue
            picks.append(route)
            walk(idx + 1, served | set(route.request_ids), cost + route.cost,
                 picks)
            picks.pop()
        walk(idx + 1, served, cost, picks)   # vehicle stays idle

    walk(0, set(), 0.0, [])
    return incumbent["picks"], incumbent["cost"]


def select_routes_assignment(routes_by_vehicle: dict, requests) -> tuple[list, float]:
    """Single-pickup mode: the selection collapses to an assignment problem."""
    req_list = sorted(requests, key=lambda r: r.id)
    col = {r.id: k for k, r in enumerate(req_list)}
    n_req = len(req_list)
    vehicle_ids = sorted(routes_by_vehicle)
    cost = np.full((len(vehicle_ids) + n_req, n_req), _BIG)
    route_at = {}
    for row, vid in enumerate(vehicle_ids):
        for route in routes_by_vehicle[vid]:
            if len(route.request_ids) != 1:
                raise ValueError("assignment mode needs single-pickup routes")
            c = col[route.request_ids[0]]
            if route.cost < cost[row, c]:
                cost[row, c] = route.cost
                route_at[(row, c)] = route
    for k, r in enumerate(req_list):
        cost[len(vehicle_ids) + k, k] = r.penalty
    rows, cols = linear_sum_assignment(cost)
    picks = []
    total = 0.0
    for row, c in zip(rows, cols):
        total += cost[row, c]
        if (row, c) in route_at:
            picks.append(route_at[(row, c)])
    return picks, float(total)
