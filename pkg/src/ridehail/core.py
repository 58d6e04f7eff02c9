"""Shared domain types: scenario configuration, travel geometry, weights, RNG streams."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

FLOAT_TOL = 1e-9


def round_half_up(x):
    """Round to the nearest integer with .5 ties going up (works on arrays)."""
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def phi_window(t: int, s: int, horizon: int) -> range:
    """Valid pickup epochs for a request placed at epoch t (1-based, inclusive)."""
    if not 1 <= t <= horizon:
        raise ValueError(f"epoch {t} outside horizon 1..{horizon}")
    return range(t, min(horizon, t + s - 1) + 1)


@dataclass(frozen=True)
class ScenarioConfig:
    """Single source of truth for one experiment.

    Epochs are 1-based in all public formulas. The multiplier list must start
    at 1.0 (keep all demand) and end at 0.0 (price out everything) so the
    pricing program always has a feasible assignment.
    """

    zone_count: int
    epoch_seconds: int = 300
    horizon: int = 6
    patience: int = 2                      # pickup window s, in epochs
    multipliers: tuple = (1.0, 0.75, 0.5, 0.25, 0.0)
    rideshare: float = 1.5                 # riders per vehicle W
    service_weight_base: tuple = (0.5, 0.75)   # (a, b) in q^p(t, rho) = a^t b^(rho-t)
    relocation_weight_scale: float = 0.001     # c_r in q^r_ij(t) = c_r a^t eta_ij
    big_m: int | None = None               # defaults to fleet_size
    fleet_size: int = 20
    vehicle_capacity: int = 4
    router_batch_seconds: int = 30
    rng_seed: int = 0
    # simulator knobs
    match_patience_epochs: int = 1
    pickup_patience_epochs: int = 2
    detour_factor: float = 1.5
    penalty_base_seconds: float = 600.0
    penalty_escalation: float = 2.0
    max_pickups_per_route: int = 2
    # zone geometry: coordinates in seconds of travel per unit distance
    zone_coords: tuple = ()                # ((x, y), ...) or empty for a default grid
    grid_cell_seconds: float = 300.0

    def __post_init__(self):
        if self.zone_count < 1:
            raise ValueError("zone_count must be >= 1")
        for name in ("epoch_seconds", "horizon", "patience", "fleet_size",
                     "vehicle_capacity", "router_batch_seconds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.patience > self.horizon:
            raise ValueError("patience s must not exceed horizon T")
        if self.epoch_seconds % self.router_batch_seconds != 0:
            raise ValueError("router_batch_seconds must divide epoch_seconds")
        gammas = tuple(float(g) for g in self.multipliers)
        if len(gammas) < 2 or abs(gammas[0] - 1.0) > FLOAT_TOL or abs(gammas[-1]) > FLOAT_TOL:
            raise ValueError("multipliers must begin with 1.0 and end with 0.0")
        if any(g1 <= g2 + FLOAT_TOL for g1, g2 in zip(gammas, gammas[1:])):
            raise ValueError("multipliers must be strictly decreasing")
        if any(g < -FLOAT_TOL or g > 1 + FLOAT_TOL for g in gammas):
            raise ValueError("multipliers must lie in [0, 1]")
        object.__setattr__(self, "multipliers", gammas)
        if self.rideshare <= 0:
            raise ValueError("rideshare W must be positive")
        if self.big_m is None:
            object.__setattr__(self, "big_m", self.fleet_size)
        if self.zone_coords:
            coords = tuple((float(x), float(y)) for x, y in self.zone_coords)
            if len(coords) != self.zone_count:
                raise ValueError("zone_coords length must equal zone_count")
            if not all(math.isfinite(x) and math.isfinite(y) for x, y in coords):
                raise ValueError("zone coordinates must be finite")
            object.__setattr__(self, "zone_coords", coords)

    @property
    def n_multipliers(self) -> int:
        return len(self.multipliers)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))

    def layout(self) -> list[tuple[float, float]]:
        """Zone centroid coordinates (seconds); defaults to a near-square grid."""
        if self.zone_coords:
            return list(self.zone_coords)
        return grid_layout(self.zone_count, self.grid_cell_seconds)


def grid_layout(zone_count: int, cell_seconds: float) -> list[tuple[float, float]]:
    """Row-major near-square grid of zone centroids spaced cell_seconds apart."""
    cols = max(1, int(math.ceil(math.sqrt(zone_count))))
    return [((k % cols) * cell_seconds, (k // cols) * cell_seconds)
            for k in range(zone_count)]


@dataclass(frozen=True)
class TravelMatrix:
    """Zone-to-zone travel times: eta in seconds, lam in epochs (lam_ii = 1)."""

    eta: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=np.int64))

    @property
    def zone_count(self) -> int:
        return self.eta.shape[0]


def build_travel_matrix(zone_layout: Sequence[tuple[float, float]] | ScenarioConfig,
                        epoch_seconds: int) -> TravelMatrix:
    """Euclidean centroid distances in seconds, rounded up to whole epochs.

    lam_ii is pinned to 1: an intra-zone trip occupies the vehicle for one
    epoch at the model's granularity.
    """
    if isinstance(zone_layout, ScenarioConfig):
        coords = zone_layout.layout()
    else:
        coords = list(zone_layout)
    if len(coords) < 1:
        raise ValueError("need at least one zone")
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
        raise ValueError("zone layout must be finite (x, y) pairs")
    diff = pts[:, None, :] - pts[None, :, :]
    eta = np.sqrt((diff ** 2).sum(axis=2))
    lam = np.ceil(eta / float(epoch_seconds)).astype(np.int64)
    np.fill_diagonal(lam, 1)
    lam = np.maximum(lam, 1)
    return TravelMatrix(eta=eta, lam=lam)


def weight_qp(t: int, rho: int, config: ScenarioConfig) -> float:
    """Service weight a^t * b^(rho - t) for a request placed at t served at rho (1-based)."""
    if not (1 <= t <= rho <= min(config.horizon, t + config.patience - 1)):
        raise ValueError(f"rho={rho} outside the service window of t={t}")
    a, b = config.service_weight_base
    return (a ** t) * (b ** (rho - t))


def weight_qr(i: int, j: int, t: int, config: ScenarioConfig,
              travel: TravelMatrix) -> float:
    """Relocation cost c_r * a^t * eta_ij for a move started at epoch t (1-based)."""
    if not 1 <= t <= config.horizon:
        raise ValueError(f"epoch {t} outside horizon")
    a, _ = config.service_weight_base
    return config.relocation_weight_scale * (a ** t) * float(travel.eta[i, j])


def _substream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")


class RandomStreams:
    """Named, independently seeded random substreams.

    The same (seed, name, indices) always yields the same generator state on
    every platform. Forking with extra indices gives deterministic children,
    each owned by exactly one consumer.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, name: str, *indices: int) -> np.random.Generator:
        key = (_substream_key(name),) + tuple(int(i) for i in indices)
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=self.seed, spawn_key=key)))


@dataclass(frozen=True)
class FleetSnapshot:
    """Fleet state the MPC sees: idle counts now plus scheduled idle events.

    idle_by_zone[i] counts vehicles idle in zone i at the snapshot instant.
    incoming holds (zone, epoch) pairs for vehicles that finish a commitment
    at the given 1-based epoch of the upcoming horizon (epoch >= 2; vehicles
    finishing inside epoch 1 are booked at epoch 2 so a relocation plan capped
    by V_i1 can always be dispatched from vehicles that are idle right now).
    """

    idle_by_zone: np.ndarray
    incoming: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "idle_by_zone",
                           np.asarray(self.idle_by_zone, dtype=np.int64))
        object.__setattr__(self, "incoming",
                           tuple((int(z), int(e)) for z, e in self.incoming))
        if np.any(self.idle_by_zone < 0):
            raise ValueError("idle counts must be nonnegative")
        if any(e < 2 for _, e in self.incoming):
            raise ValueError("incoming epochs are 1-based and must be >= 2")
