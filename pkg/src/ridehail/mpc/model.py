"""MPC program data, the feasibility validator, and the objective.

Conventions used throughout the solver code: epochs are 0-based indices into
arrays (the public weight functions stay 1-based), x^p is stored as a dense
(Z, Z, T, T) array indexed [origin, dest, request_epoch, serve_epoch], and
idle supply not consumed in an epoch carries forward as a reconstructed
nonnegative slack w_it rather than an explicit variable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import (FleetSnapshot, ScenarioConfig, TravelMatrix, round_half_up,
                    weight_qp)

INT_TOL = 1e-9


def demand_options(d0: np.ndarray, multipliers) -> np.ndarray:
    """Per-multiplier demand D^k = round_half_up(gamma_k * D^0), shape (K, Z, Z, T)."""
    d0 = np.asarray(d0, dtype=np.int64)
    return np.stack([round_half_up(g * d0) for g in multipliers])


@dataclass(frozen=True)
class MpcInstance:
    """Inputs of one pricing-and-relocation program.

    service_guarantee=False relaxes the full-service equality rows to <=,
    which is what the relocation-only baseline needs when pricing is pinned
    to gamma=1 and serving everything may be impossible.
    """

    V: np.ndarray           # (Z, T) vehicles becoming idle
    D0: np.ndarray          # (Z, Z, T) baseline demand in vehicle units
    Dk: np.ndarray          # (K, Z, Z, T) demand options
    travel: TravelMatrix
    config: ScenarioConfig
    service_guarantee: bool = True

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=np.int64))
        object.__setattr__(self, "D0", np.asarray(self.D0, dtype=np.int64))
        object.__setattr__(self, "Dk", np.asarray(self.Dk, dtype=np.int64))
        z, t = self.zones, self.horizon
        if self.V.shape != (z, t) or self.D0.shape != (z, z, t):
            raise ValueError("V/D0 shapes inconsistent with the config")
        if self.Dk.shape != (self.config.n_multipliers, z, z, t):
            raise ValueError("Dk shape inconsistent with the multiplier set")
        if np.any(self.V < 0) or np.any(self.D0 < 0):
            raise ValueError("V and D0 must be nonnegative")
        if np.any(np.diff(self.Dk, axis=0) > 0):
            raise ValueError("Dk must be nonincreasing in k")

    @property
    def zones(self) -> int:
        return self.config.zone_count

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def kept_demand(self, k_choice: np.ndarray) -> np.ndarray:
        """v[i, j, t] under the multiplier index assignment k_choice (Z, T)."""
        z, t = self.zones, self.horizon
        v = np.empty((z, z, t), dtype=np.int64)
        for i in range(z):
            for tt in range(t):
                v[i, :, tt] = self.Dk[k_choice[i, tt], i, :, tt]
        return v


def make_instance(V, D0, config: ScenarioConfig, travel: TravelMatrix,
                  service_guarantee: bool = True) -> MpcInstance:
    return MpcInstance(V=np.asarray(V), D0=np.asarray(D0),
                       Dk=demand_options(D0, config.multipliers),
                       travel=travel, config=config,
                       service_guarantee=service_guarantee)


def build_instance(demand: np.ndarray, fleet: FleetSnapshot,
                   config: ScenarioConfig, travel: TravelMatrix) -> MpcInstance:
    """Assemble the program from a demand tensor and a fleet snapshot.

    V_i1 counts vehicles idle right now; scheduled idle events land at their
    (zone, epoch) if the epoch is within the horizon, otherwise they fall
    outside the program.
    """
    z, t = config.zone_count, config.horizon
    demand = np.asarray(demand, dtype=np.int64)
    if demand.shape != (z, z, t):
        raise ValueError(f"demand tensor shape {demand.shape} != {(z, z, t)}")
    v_mat = np.zeros((z, t), dtype=np.int64)
    v_mat[:, 0] = fleet.idle_by_zone
    for zone, epoch in fleet.incoming:
        if epoch <= t:
            v_mat[zone, epoch - 1] += 1
    if int(v_mat.sum()) > config.fleet_size:
        raise ValueError("fleet snapshot exceeds fleet_size")
    return make_instance(v_mat, demand, config, travel)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def weight_tables(config: ScenarioConfig, travel: TravelMatrix):
    """(qp, qr, valid) tables: qp[t0, rho] service weight (0 where invalid),
    qr[i, j, t] relocation cost, valid[t0, rho] the x^p subscript domain."""
    t = config.horizon
    qp = np.zeros((t, t))
    valid = np.zeros((t, t), dtype=bool)
    for t0 in range(t):
        for rho in range(t0, min(t - 1, t0 + config.patience - 1) + 1):
            qp[t0, rho] = weight_qp(t0 + 1, rho + 1, config)
            valid[t0, rho] = True
    z = travel.zone_count
    qr = np.zeros((z, z, t))
    a, _ = config.service_weight_base
    for tt in range(t):
        qr[:, :, tt] = config.relocation_weight_scale * (a ** (tt + 1)) * travel.eta
    return qp, qr, valid


def objective_of(instance: MpcInstance, xp: np.ndarray, xr: np.ndarray) -> float:
    """Weighted riders served minus relocation cost, recomputed from scratch."""
    qp, qr, _ = weight_tables(instance.config, instance.travel)
    w = instance.config.rideshare
    service = float((xp.sum(axis=(0, 1)) * qp).sum()) * w
    reloc = float((xr * qr).sum())
    return service - reloc


# ---------------------------------------------------------------------------
# solution and validation
# ---------------------------------------------------------------------------

@dataclass
class MpcSolution:
    p: np.ndarray           # (K, Z, T) one-hot multiplier choice
    xr: np.ndarray          # (Z, Z, T) relocations
    xp: np.ndarray          # (Z, Z, T, T) services [i, j, t0, rho]
    v: np.ndarray           # (Z, Z, T) kept demand
    objective: float
    status: str = "optimal"     # optimal | budget-feasible | infeasible-reported
    nodes_explored: int = 0

    def k_choice(self) -> np.ndarray:
        return self.p.argmax(axis=0)


@dataclass(frozen=True)
class Violation:
    code: str
    where: tuple
    detail: str = ""

    def __str__(self):
        return f"{self.code} at {self.where}: {self.detail}"


def arrivals_table(instance: MpcInstance, xp: np.ndarray, xr: np.ndarray) -> np.ndarray:
    """Vehicles re-entering each (zone, epoch) pool from finished services and
    relocations; flows landing beyond the horizon are dropped."""
    z, t = instance.zones, instance.horizon
    lam = instance.travel.lam
    arr = np.zeros((z, t), dtype=np.int64)
    for i in range(z):
        for j in range(z):
            shift = int(lam[i, j])
            for rho in range(t - shift):
                arr[j, rho + shift] += int(xp[i, j, :, rho].sum())
                arr[j, rho + shift] += int(xr[i, j, rho])
    return arr


def idle_carry(instance: MpcInstance, xp: np.ndarray, xr: np.ndarray) -> np.ndarray:
    """Reconstructed idle slack w_it; negative entries mean the balance rows fail."""
    z, t = instance.zones, instance.horizon
    arr = arrivals_table(instance, xp, xr)
    w = np.zeros((z, t), dtype=np.int64)
    for tt in range(t):
        avail = instance.V[:, tt] + arr[:, tt] + (w[:, tt - 1] if tt else 0)
        depart = xp[:, :, :, tt].sum(axis=(1, 2)) + xr[:, :, tt].sum(axis=1)
        w[:, tt] = avail - depart
    return w


def backlog_table(instance: MpcInstance, v: np.ndarray, xp: np.ndarray) -> np.ndarray:
    """backlog[i, t]: kept demand whose service window covers t and that is
    still unserved at the end of epoch t."""
    z, t = instance.zones, instance.horizon
    s = instance.config.patience
    backlog = np.zeros((z, t), dtype=np.int64)
    for t0 in range(t):
        deadline = min(t - 1, t0 + s - 1)
        for tt in range(t0, deadline + 1):
            served = xp[:, :, t0, t0:tt + 1].sum(axis=2)
            backlog[:, tt] += (v[:, :, t0] - served).sum(axis=1)
    return backlog


def _near_int(arr) -> bool:
    return bool(np.all(np.abs(np.asarray(arr, dtype=float)
                              - np.round(np.asarray(arr, dtype=float))) <= INT_TOL))


def validate_solution(instance: MpcInstance, candidate: MpcSolution) -> list[Violation]:
    """Check every program constraint; violations are returned, never raised.

    An empty report means the candidate is feasible for the instance.
    """
    z, t = instance.zones, instance.horizon
    k = instance.config.n_multipliers
    s = instance.config.patience
    p, xr, xp, v = candidate.p, candidate.xr, candidate.xp, candidate.v
    if (np.shape(p) != (k, z, t) or np.shape(xr) != (z, z, t)
            or np.shape(xp) != (z, z, t, t) or np.shape(v) != (z, z, t)):
        raise ValueError("candidate shapes do not match the instance")
    out: list[Violation] = []
    for name, arr in (("p", p), ("xr", xr), ("xp", xp), ("v", v)):
        if not _near_int(arr):
            out.append(Violation("integrality", (name,), "non-integer values"))
        if np.any(np.asarray(arr) < -INT_TOL):
            out.append(Violation("nonnegativity", (name,), "negative values"))
    if out:
        return out
    p = np.round(np.asarray(p, dtype=float)).astype(np.int64)
    xr = np.round(np.asarray(xr, dtype=float)).astype(np.int64)
    xp = np.round(np.asarray(xp, dtype=float)).astype(np.int64)
    v = np.round(np.asarray(v, dtype=float)).astype(np.int64)

    ones = p.sum(axis=0)
    for i, tt in zip(*np.where(ones != 1)):
        out.append(Violation("multiplier-choice", (int(i), int(tt)),
                             f"sum of p over k is {int(ones[i, tt])}"))
    if np.any(p > 1):
        out.append(Violation("multiplier-choice", ("p",), "entries above 1"))
    implied = (instance.Dk * p[:, :, None, :]).sum(axis=0)
    for i, j, tt in zip(*np.where(implied != v)):
        out.append(Violation("price-demand-link", (int(i), int(j), int(tt)),
                             f"v={int(v[i, j, tt])} but chosen demand="
                             f"{int(implied[i, j, tt])}"))

    # x^p subscript domain
    valid = np.zeros((t, t), dtype=bool)
    for t0 in range(t):
        valid[t0, t0:min(t - 1, t0 + s - 1) + 1] = True
    bad = xp[:, :, ~valid]
    if np.any(bad != 0):
        out.append(Violation("service-domain", ("xp",),
                             "flow outside the valid (t, rho) window"))

    served = xp.sum(axis=3)
    for t0 in range(t):
        mandatory = instance.service_guarantee and t0 <= t - s
        for i in range(z):
            for j in range(z):
                got, want = int(served[i, j, t0]), int(v[i, j, t0])
                if mandatory and got != want:
                    out.append(Violation("service-full", (i, j, t0),
                                         f"served {got} of {want}"))
                elif not mandatory and got > want:
                    out.append(Violation("service-cap", (i, j, t0),
                                         f"served {got} exceeds {want}"))

    w = idle_carry(instance, xp, xr)
    for i, tt in zip(*np.where(w < 0)):
        out.append(Violation("flow-balance", (int(i), int(tt)),
                             f"departures exceed supply by {-int(w[i, tt])}"))

    if np.any(np.diagonal(xr, axis1=0, axis2=1) != 0):
        out.append(Violation("self-relocation", ("xr",), "diagonal must be zero"))

    backlog = backlog_table(instance, v, xp)
    reloc_out = xr.sum(axis=1)
    for i, tt in zip(*np.where((reloc_out > 0) & (backlog > 0))):
        out.append(Violation("relocation-backlog", (int(i), int(tt)),
                             f"relocating {int(reloc_out[i, tt])} with backlog "
                             f"{int(backlog[i, tt])}"))

    recomputed = objective_of(instance, xp, xr)
    if abs(recomputed - candidate.objective) > 1e-6:
        out.append(Violation("objective-mismatch", (),
                             f"reported {candidate.objective!r}, "
                             f"recomputed {recomputed!r}"))
    return out


def first_epoch_actions(solution: MpcSolution, config: ScenarioConfig):
    """Project onto epoch 1: per-zone multiplier values and the relocation matrix."""
    k_first = solution.p[:, :, 0].argmax(axis=0)
    gammas = np.array([config.multipliers[k] for k in k_first])
    return gammas, solution.xr[:, :, 0].copy()
