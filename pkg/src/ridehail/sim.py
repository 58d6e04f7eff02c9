"""Zone-level discrete-event fleet simulator.

One episode advances in router-batch steps: at epoch boundaries the policy is
consulted (pricing multipliers and a relocation plan), arrivals are admitted
through the pricing filter, finished vehicles become idle, expired riders drop
out, and the batch router matches open requests to idle vehicles. Conservation
invariants are asserted at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (FleetSnapshot, RandomStreams, ScenarioConfig, TravelMatrix,
                   build_travel_matrix, round_half_up)
from .demand import DemandProfile, RequestStream, disaggregate, DestinationDistribution
from .mpc import build_instance
from .router import enumerate_routes, select_routes_assignment, select_routes_dfs

METRICS_SCHEMA_VERSION = 1
TRACE_SCHEMA_VERSION = 1


class PlanRejected(Exception):
    """Relocation plan asks for more idle vehicles than a zone holds."""

    def __init__(self, report):
        super().__init__("; ".join(str(v) for v in report))
        self.report = report


class InvariantError(AssertionError):
    pass


@dataclass
class Vehicle:
    id: int
    zone: int                  # current zone, or destination while busy
    busy_until: float = 0.0
    onboard: int = 0

    def idle(self, clock: float) -> bool:
        return self.busy_until <= clock + 1e-9


@dataclass
class OpenRequest:
    id: int
    origin: int
    dest: int
    time_s: float
    riders: int
    penalty: float
    matched: bool = False


@dataclass
class Metrics:
    """Per-episode outcome series plus the rider-accounting counters."""

    policy: str = ""
    seed: int = 0
    episode_epochs: int = 0
    arrivals_requests: int = 0
    arrivals_riders: int = 0
    served_requests: int = 0
    served_riders: int = 0
    dropped_requests: int = 0
    dropped_riders: int = 0
    discarded_requests: int = 0
    discarded_riders: int = 0
    open_requests_end: int = 0
    relocations: int = 0
    wait_seconds_total: float = 0.0

    @property
    def mean_wait_s(self) -> float:
        return self.wait_seconds_total / self.served_riders \
            if self.served_riders else 0.0

    @property
    def dropout_pct(self) -> float:
        return 100.0 * self.dropped_riders / self.arrivals_riders \
            if self.arrivals_riders else 0.0

    HEADER = ["policy", "seed", "episode_epochs", "arrivals_requests",
              "arrivals_riders", "served_requests", "served_riders",
              "dropped_requests", "dropped_riders", "discarded_requests",
              "discarded_riders", "open_requests_end", "relocations",
              "wait_seconds_total", "mean_wait_s", "dropout_pct"]

    def to_row(self) -> list:
        return [self.policy, self.seed, self.episode_epochs,
                self.arrivals_requests, self.arrivals_riders,
                self.served_requests, self.served_riders,
                self.dropped_requests, self.dropped_riders,
                self.discarded_requests, self.discarded_riders,
                self.open_requests_end, self.relocations,
                repr(float(self.wait_seconds_total)),
                repr(float(self.mean_wait_s)), repr(float(self.dropout_pct))]


@dataclass
class SimState:
    config: ScenarioConfig
    travel: TravelMatrix
    clock: float = 0.0
    vehicles: list = field(default_factory=list)
    open: dict = field(default_factory=dict)       # id -> OpenRequest
    metrics: Metrics = field(default_factory=Metrics)
    retention: np.ndarray | None = None            # current-epoch gamma per zone

    def idle_vehicles(self) -> list:
        return [v for v in self.vehicles if v.idle(self.clock)]

    def idle_count_by_zone(self) -> np.ndarray:
        counts = np.zeros(self.config.zone_count, dtype=np.int64)
        for v in self.idle_vehicles():
            counts[v.zone] += 1
        return counts

    def fleet_snapshot(self) -> FleetSnapshot:
        """Idle-now counts plus (zone, epoch) events for busy vehicles; a
        vehicle finishing inside the current epoch is booked at epoch 2."""
        ep = self.config.epoch_seconds
        idle = np.zeros(self.config.zone_count, dtype=np.int64)
        incoming = []
        for v in self.vehicles:
            if v.idle(self.clock):
                idle[v.zone] += 1
            else:
                delta = v.busy_until - self.clock
                epoch = max(2, int(math.floor(delta / ep)) + 1)
                incoming.append((v.zone, epoch))
        return FleetSnapshot(idle_by_zone=idle, incoming=tuple(incoming))

    def check_invariants(self):
        m = self.metrics
        accounted = (m.served_requests + m.dropped_requests
                     + m.discarded_requests + len(self.open))
        if accounted != m.arrivals_requests:
            raise InvariantError(
                f"rider accounting broken: {accounted} != {m.arrivals_requests}")
        if len(self.vehicles) != self.config.fleet_size:
            raise InvariantError("fleet size changed")
        for v in self.vehicles:
            if v.onboard > self.config.vehicle_capacity:
                raise InvariantError(f"vehicle {v.id} over capacity")
            if not v.idle(self.clock) and v.busy_until < self.clock - 1e-9:
                raise InvariantError("busy vehicle with past busy_until")


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------

def apply_pricing(state: SimState, gammas, rng: np.random.Generator) -> None:
    """Set this epoch's retention probabilities and filter any not-yet-matched
    current-epoch requests already in the state."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.shape != (state.config.zone_count,):
        raise ValueError("gamma vector shape mismatch")
    allowed = np.asarray(state.config.multipliers)
    for g in gammas:
        if np.min(np.abs(allowed - g)) > 1e-9:
            raise ValueError(f"gamma {g} not in the configured multiplier set")
    state.retention = gammas
    epoch_start = (int(state.clock) // state.config.epoch_seconds
                   * state.config.epoch_seconds)
    for rid in sorted(state.open):
        req = state.open[rid]
        if req.matched or req.time_s < epoch_start:
            continue
        if rng.random() >= gammas[req.origin]:
            del state.open[rid]
            state.metrics.discarded_requests += 1
            state.metrics.discarded_riders += req.riders


def _admit(state: SimState, request, rng: np.random.Generator) -> None:
    m = state.metrics
    m.arrivals_requests += 1
    m.arrivals_riders += request.riders
    g = 1.0 if state.retention is None else float(state.retention[request.origin])
    if rng.random() >= g:
        m.discarded_requests += 1
        m.discarded_riders += request.riders
        return
    state.open[request.id] = OpenRequest(
        id=request.id, origin=request.origin, dest=request.dest,
        time_s=request.time_s, riders=request.riders,
        penalty=state.config.penalty_base_seconds)


def apply_relocation(state: SimState, plan: np.ndarray) -> None:
    """Dispatch plan[i, j] idle vehicles from i to j; busy until arrival."""
    plan = np.asarray(plan, dtype=np.int64)
    z = state.config.zone_count
    if plan.shape != (z, z):
        raise ValueError("relocation plan shape mismatch")
    if np.any(plan < 0):
        raise PlanRejected([f"negative entries in relocation plan"])
    if np.any(plan.diagonal() != 0):
        raise PlanRejected(["self-relocations are not dispatchable"])
    idle = state.idle_count_by_zone()
    need = plan.sum(axis=1)
    report = [f"zone {i}: plan sends {int(need[i])} but only "
              f"{int(idle[i])} idle" for i in range(z) if need[i] > idle[i]]
    if report:
        raise PlanRejected(report)
    pool = {}
    for v in sorted(state.idle_vehicles(), key=lambda v: v.id):
        pool.setdefault(v.zone, []).append(v)
    for i in range(z):
        for j in range(z):
            for _ in range(int(plan[i, j])):
                vehicle = pool[i].pop(0)
                vehicle.zone = j
                vehicle.busy_until = state.clock + float(state.travel.eta[i, j])
                state.metrics.relocations += 1


def step_router(state: SimState) -> list:
    """One routing batch: enumerate candidate routes for idle vehicles and
    apply the exact selection; unassigned requests escalate their penalty."""
    config = state.config
    open_unmatched = [r for r in state.open.values() if not r.matched]
    idle = state.idle_vehicles()
    picks = []
    if open_unmatched and idle:
        allow_pairs = config.max_pickups_per_route >= 2
        routes_by_vehicle = {
            v.id: enumerate_routes(v.zone, v.id, state.clock, open_unmatched,
                                   config, state.travel, allow_pairs)
            for v in idle}
        if allow_pairs:
            picks, _ = select_routes_dfs(routes_by_vehicle, open_unmatched)
        else:
            picks, _ = select_routes_assignment(routes_by_vehicle,
                                                open_unmatched)
        vehicles = {v.id: v for v in state.vehicles}
        for route in picks:
            vehicle = vehicles[route.vehicle_id]
            if not vehicle.idle(state.clock):
                raise InvariantError("router assigned a busy vehicle")
            riders = 0
            for rid, pickup in zip(route.request_ids, route.pickups):
                req = state.open.pop(rid)
                riders += req.riders
                state.metrics.served_requests += 1
                state.metrics.served_riders += req.riders
                state.metrics.wait_seconds_total += (pickup - req.time_s) * req.riders
            vehicle.onboard = riders
            vehicle.zone = route.final_zone
            vehicle.busy_until = route.completion
    assigned = {rid for route in picks for rid in route.request_ids}
    for req in open_unmatched:
        if req.id not in assigned:
            req.penalty *= config.penalty_escalation
    return picks


# ---------------------------------------------------------------------------
# episode loop
# ---------------------------------------------------------------------------

def _rate_demand_oracle(config: ScenarioConfig, profile: DemandProfile):
    """Prior-knowledge forecast: expected profile rates through the zone-level
    -> destination-split -> rounding pipeline."""
    mu = DestinationDistribution(profile.destination_matrix())

    def oracle(epoch0: int) -> np.ndarray:
        t = config.horizon
        rates = np.array([[profile.zone_rate(i, epoch0 + dt + 1)
                           for dt in range(t)]
                          for i in range(config.zone_count)])
        zone_level = round_half_up(rates / config.rideshare)
        return disaggregate(zone_level, mu)

    return oracle


def run_episode(config: ScenarioConfig, stream: RequestStream, policy,
                *, episode_epochs: int | None = None,
                profile: DemandProfile | None = None,
                demand_oracle=None, seed: int | None = None,
                decision_hook=None, trace_path=None,
                check_invariants: bool = True) -> Metrics:
    """Run one closed-loop episode and return its metrics.

    The policy object decides (gammas, relocation plan) from each epoch's
    instance; policies with needs_instance=False skip the MPC block entirely.
    Identical (config, stream, policy, seed) replays are byte-identical.
    """
    travel = build_travel_matrix(config, config.epoch_seconds)
    ep = config.epoch_seconds
    if episode_epochs is None:
        last = max((r.time_s for r in stream), default=0.0)
        episode_epochs = max(1, int(math.ceil((last + 1.0) / ep)))
    needs_instance = getattr(policy, "needs_instance", True)
    if needs_instance and demand_oracle is None:
        if profile is None:
            raise ValueError("policy needs demand forecasts: pass profile "
                             "or demand_oracle")
        demand_oracle = _rate_demand_oracle(config, profile)

    streams = RandomStreams(config.rng_seed if seed is None else seed)
    discard_rng = streams.stream("pricing-discard")
    placement = streams.stream("fleet-init")
    zones = placement.integers(0, config.zone_count, size=config.fleet_size)
    state = SimState(config=config, travel=travel,
                     vehicles=[Vehicle(id=k, zone=int(z))
                               for k, z in enumerate(zones)])
    state.metrics.policy = getattr(policy, "name", type(policy).__name__)
    state.metrics.seed = config.rng_seed if seed is None else seed
    state.metrics.episode_epochs = episode_epochs

    pending = sorted(stream, key=lambda r: (r.time_s, r.id))
    next_arrival = 0
    trace_rows = []
    match_patience_s = config.match_patience_epochs * ep

    for step in range(0, episode_epochs * ep // config.router_batch_seconds + 1):
        state.clock = step * config.router_batch_seconds
        if state.clock >= episode_epochs * ep:
            break
        # epoch boundary: policy block
        if int(state.clock) % ep == 0:
            epoch0 = int(state.clock) // ep
            if needs_instance:
                instance = build_instance(demand_oracle(epoch0),
                                          state.fleet_snapshot(),
                                          config, travel)
                gammas, plan = policy.decide(instance, epoch0)
            else:
                gammas = np.ones(config.zone_count)
                plan = np.zeros((config.zone_count, config.zone_count),
                                dtype=np.int64)
                instance = None
            if decision_hook is not None and instance is not None:
                decision_hook(epoch0, instance, gammas, plan)
            apply_pricing(state, gammas, discard_rng)
            apply_relocation(state, plan)
        # release vehicles that finished their commitments
        for v in state.vehicles:
            if 0 < v.busy_until <= state.clock + 1e-9:
                v.onboard = 0
        # admit arrivals up to the current clock
        while (next_arrival < len(pending)
               and pending[next_arrival].time_s <= state.clock + 1e-9):
            _admit(state, pending[next_arrival], discard_rng)
            next_arrival += 1
        # drop riders that outlived the matching patience
        for rid in sorted(state.open):
            req = state.open[rid]
            if not req.matched and state.clock - req.time_s > match_patience_s + 1e-9:
                del state.open[rid]
                state.metrics.dropped_requests += 1
                state.metrics.dropped_riders += req.riders
        step_router(state)
        if check_invariants:
            state.check_invariants()
        if trace_path is not None and (int(state.clock) + config.router_batch_seconds) % ep == 0:
            m = state.metrics
            trace_rows.append([int(state.clock) // ep + 1, len(state.open),
                               m.served_riders, m.dropped_riders,
                               m.discarded_riders, m.relocations])
    state.metrics.open_requests_end = len(state.open)
    if trace_path is not None:
        from .textio import write_csv
        write_csv(trace_path,
                  ["epoch", "open", "served_cum", "dropped_cum",
                   "discarded_cum", "relocations_cum"],
                  trace_rows, "episode_trace", TRACE_SCHEMA_VERSION)
    return state.metrics
