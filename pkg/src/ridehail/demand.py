"""Synthetic demand: request streams, zone-level aggregation, destination
disaggregation, and a small neural zone-demand forecaster."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import ScenarioConfig, round_half_up
from .nnet import MLP

STREAM_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Request:
    id: int
    origin: int
    dest: int
    time_s: float
    riders: int = 1


@dataclass
class RequestStream:
    """Time-ordered ride requests realized from a demand profile."""

    requests: list = field(default_factory=list)

    def __post_init__(self):
        times = [r.time_s for r in self.requests]
        if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("request times must be nondecreasing")

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def total_riders(self) -> int:
        return sum(r.riders for r in self.requests)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# request_stream_schema={STREAM_SCHEMA_VERSION}\n")
            writer = csv.writer(fh)
            writer.writerow(["id", "origin", "dest", "time_s", "riders"])
            for r in self.requests:
                writer.writerow([r.id, r.origin, r.dest, repr(r.time_s), r.riders])

    @classmethod
    def load_csv(cls, path) -> "RequestStream":
        with open(path, newline="") as fh:
            rows = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.DictReader(rows)
        reqs = [Request(int(row["id"]), int(row["origin"]), int(row["dest"]),
                        float(row["time_s"]), int(row["riders"]))
                for row in reader]
        return cls(reqs)


# ---------------------------------------------------------------------------
# demand profiles
# ---------------------------------------------------------------------------

class DemandProfile:
    """Expected request rates per (origin, dest, epoch). Rates are requests
    per origin zone per epoch, split over destinations by the profile's mu."""

    name = "base"

    def __init__(self, zone_count: int):
        self.zone_count = zone_count

    def zone_rate(self, i: int, epoch: int) -> float:
        raise NotImplementedError

    def destination_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def pair_rate(self, i: int, j: int, epoch: int) -> float:
        return self.zone_rate(i, epoch) * self.destination_matrix()[i, j]

    def expected_zone_rates(self, epochs: int) -> np.ndarray:
        return np.array([[self.zone_rate(i, t) for t in range(1, epochs + 1)]
                         for i in range(self.zone_count)])


class UniformProfile(DemandProfile):
    name = "uniform"

    def __init__(self, zone_count: int, rate: float = 1.0):
        super().__init__(zone_count)
        self.rate = float(rate)

    def zone_rate(self, i, epoch):
        return self.rate

    def destination_matrix(self):
        return np.full((self.zone_count, self.zone_count), 1.0 / self.zone_count)


class HubSpokeProfile(DemandProfile):
    """Spoke zones send most trips to hub zones; hubs send a trickle back."""

    name = "hub-and-spoke"

    def __init__(self, zone_count: int, hub_zones=(0,), spoke_rate=2.0,
                 hub_rate=0.5, to_hub_fraction=0.85):
        super().__init__(zone_count)
        self.hub_zones = tuple(int(h) for h in hub_zones)
        if not self.hub_zones or any(not 0 <= h < zone_count for h in self.hub_zones):
            raise ValueError("hub zones out of range")
        self.spoke_rate = float(spoke_rate)
        self.hub_rate = float(hub_rate)
        self.to_hub_fraction = float(to_hub_fraction)

    def zone_rate(self, i, epoch):
        return self.hub_rate if i in self.hub_zones else self.spoke_rate

    def destination_matrix(self):
        z = self.zone_count
        hubs = set(self.hub_zones)
        spokes = [j for j in range(z) if j not in hubs]
        mu = np.zeros((z, z))
        for i in range(z):
            if i in hubs:
                # hubs send trips outward, spread over spokes
                if spokes:
                    mu[i, spokes] = 1.0 / len(spokes)
                else:
                    mu[i, i] = 1.0
            else:
                mu[i, list(hubs)] = self.to_hub_fraction / len(hubs)
                others = [j for j in spokes if j != i]
                rest = 1.0 - self.to_hub_fraction
                if others:
                    mu[i, others] = rest / len(others)
                else:
                    mu[i, i] += rest
        return mu


class MorningRushProfile(DemandProfile):
    """Residential zones ramp up strongly toward business zones mid-window."""

    name = "morning-rush"

    def __init__(self, zone_count: int, residential=None, business=None,
                 residential_rate=2.5, business_rate=0.5, peak_epoch=8,
                 peak_width=6.0, peak_boost=1.5):
        super().__init__(zone_count)
        if residential is None:
            residential = tuple(range(zone_count // 2, zone_count))
        if business is None:
            business = tuple(j for j in range(zone_count) if j not in residential)
        self.residential = tuple(residential)
        self.business = tuple(business) or tuple(residential[:1])
        self.residential_rate = float(residential_rate)
        self.business_rate = float(business_rate)
        self.peak_epoch = float(peak_epoch)
        self.peak_width = float(peak_width)
        self.peak_boost = float(peak_boost)

    def _ramp(self, epoch: int) -> float:
        return 1.0 + self.peak_boost * np.exp(
            -((epoch - self.peak_epoch) / self.peak_width) ** 2)

    def zone_rate(self, i, epoch):
        base = self.residential_rate if i in self.residential else self.business_rate
        return base * self._ramp(epoch)

    def destination_matrix(self):
        z = self.zone_count
        mu = np.zeros((z, z))
        biz = list(self.business)
        for i in range(z):
            if i in self.residential:
                mu[i, biz] = 0.9 / len(biz)
                others = [j for j in range(z) if j not in biz]
                if others:
                    mu[i, others] = 0.1 / len(others)
                else:
                    mu[i, biz] = 1.0 / len(biz)
            else:
                mu[i, :] = 1.0 / z
        return mu


class CustomMatrixProfile(DemandProfile):
    name = "custom-matrix"

    def __init__(self, rates: np.ndarray):
        rates = np.asarray(rates, dtype=float)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
            raise ValueError("custom rates must be a square (Z, Z) matrix")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("custom rates must be finite and nonnegative")
        super().__init__(rates.shape[0])
        self.rates = rates

    def zone_rate(self, i, epoch):
        return float(self.rates[i].sum())

    def destination_matrix(self):
        totals = self.rates.sum(axis=1, keepdims=True)
        mu = np.where(totals > 0, self.rates / np.maximum(totals, 1e-300),
                      1.0 / self.zone_count)
        return mu


PROFILE_NAMES = ("uniform", "hub-and-spoke", "morning-rush", "custom-matrix")


def make_profile(name: str, config: ScenarioConfig, **params) -> DemandProfile:
    z = config.zone_count
    if name == "uniform":
        return UniformProfile(z, **params)
    if name == "hub-and-spoke":
        return HubSpokeProfile(z, **params)
    if name == "morning-rush":
        return MorningRushProfile(z, **params)
    if name == "custom-matrix":
        return CustomMatrixProfile(**params)
    raise ValueError(f"unknown demand profile {name!r}")


def generate_scenario_demand(config: ScenarioConfig, profile: DemandProfile,
                             rng: np.random.Generator, epochs: int) -> RequestStream:
    """Poisson arrivals per (origin, dest, epoch) with uniform times in-epoch.

    Deterministic given the generator state; requests come out time-sorted
    with sequential ids.
    """
    mu = profile.destination_matrix()
    z = profile.zone_count
    raw = []
    for t in range(1, epochs + 1):
        t0 = (t - 1) * config.epoch_seconds
        for i in range(z):
            for j in range(z):
                lam = profile.zone_rate(i, t) * mu[i, j]
                if lam <= 0:
                    continue
                n = rng.poisson(lam)
                if n == 0:
                    continue
                times = t0 + rng.uniform(0.0, config.epoch_seconds, size=n)
                raw.extend((float(ts), i, j) for ts in times)
    raw.sort()
    reqs = [Request(idx, i, j, ts, 1) for idx, (ts, i, j) in enumerate(raw)]
    return RequestStream(reqs)


def perturb_stream(stream: RequestStream, percent: float, config: ScenarioConfig,
                   profile: DemandProfile, rng: np.random.Generator,
                   epochs: int) -> RequestStream:
    """Add or delete round(|pct|% of n) requests; additions are fresh draws
    from the profile at uniformly random epochs."""
    n = len(stream)
    count = int(round_half_up(abs(percent) / 100.0 * n))
    reqs = list(stream.requests)
    if percent < 0 and count > 0:
        drop = set(rng.choice(n, size=min(count, n), replace=False).tolist())
        reqs = [r for k, r in enumerate(reqs) if k not in drop]
    elif percent > 0 and count > 0:
        mu = profile.destination_matrix()
        z = profile.zone_count
        rates = profile.expected_zone_rates(epochs)
        flat = (rates[:, :, None] * mu[:, None, :]).ravel()
        total = flat.sum()
        probs = flat / total if total > 0 else np.full(flat.size, 1.0 / flat.size)
        picks = rng.choice(flat.size, size=count, p=probs)
        for pick in picks:
            i, t_idx, j = np.unravel_index(pick, (z, epochs, z))
            ts = t_idx * config.epoch_seconds + rng.uniform(0, config.epoch_seconds)
            reqs.append(Request(-1, int(i), int(j), float(ts), 1))
    reqs.sort(key=lambda r: r.time_s)
    return RequestStream([Request(k, r.origin, r.dest, r.time_s, r.riders)
                          for k, r in enumerate(reqs)])


# ---------------------------------------------------------------------------
# aggregation / disaggregation
# ---------------------------------------------------------------------------

def aggregate_zone_demand(stream: RequestStream, config: ScenarioConfig,
                          epochs: int) -> np.ndarray:
    """Zone-epoch vehicle-equivalent demand D_it: riders / W, rounded half-up."""
    riders = np.zeros((config.zone_count, epochs), dtype=np.int64)
    for r in stream:
        t = int(r.time_s // config.epoch_seconds)
        if 0 <= t < epochs:
            riders[r.origin, t] += r.riders
    return round_half_up(riders / config.rideshare)


@dataclass(frozen=True)
class DestinationDistribution:
    """Row-stochastic destination split mu_ij."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if np.any(mu < 0) or np.any(np.abs(mu.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("mu must be row-stochastic")
        object.__setattr__(self, "mu", mu)

    @classmethod
    def estimate(cls, streams, zone_count: int) -> "DestinationDistribution":
        """Empirical destination frequencies with +1 Laplace smoothing."""
        counts = np.ones((zone_count, zone_count), dtype=float)
        for stream in streams:
            for r in stream:
                counts[r.origin, r.dest] += 1.0
        return cls(counts / counts.sum(axis=1, keepdims=True))


def disaggregate(zone_demand: np.ndarray, dist: DestinationDistribution) -> np.ndarray:
    """Zone-to-zone tensor D0[i, j, t] = round_half_up(D_it * mu_ij)."""
    d = np.asarray(zone_demand)
    return round_half_up(d[:, None, :] * dist.mu[:, :, None])


def dump_demand_tensor(d0: np.ndarray, path):
    """Debug dump: one `i j t value` row per non-empty cell."""
    with open(path, "w") as fh:
        fh.write("# demand_tensor_schema=1\n")
        fh.write("i j t value\n")
        for (i, j, t), val in np.ndenumerate(d0):
            if val:
                fh.write(f"{i} {j} {t + 1} {val}\n")


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------

@dataclass
class ForecastModel:
    """Zone-shared neural forecaster: recent k epochs + week-ago window -> next T."""

    net: MLP
    recent_window: int
    horizon: int

    def predict(self, recent: np.ndarray, week_ago: np.ndarray) -> np.ndarray:
        """Per-zone prediction; inputs are (Z, k) and (Z, T), output (Z, T) >= 0."""
        recent = np.atleast_2d(recent)
        week_ago = np.atleast_2d(week_ago)
        if recent.shape[1] != self.recent_window or week_ago.shape[1] != self.horizon:
            raise ValueError("window widths do not match the trained model")
        x = np.hstack([recent, week_ago])
        return np.maximum(self.net.predict(x), 0.0)


def _forecast_windows(day_matrices, recent_window: int, horizon: int,
                      week: int = 7):
    """(recent, week_ago, target) training rows from a list of (Z, E) days."""
    xs, ys = [], []
    epochs = day_matrices[0].shape[1]
    for d in range(week, len(day_matrices)):
        today = day_matrices[d]
        week_ago_day = day_matrices[d - week]
        for e in range(recent_window, epochs - horizon + 1):
            recent = today[:, e - recent_window:e]
            ahead = week_ago_day[:, e:e + horizon]
            target = today[:, e:e + horizon]
            xs.append(np.hstack([recent, ahead]))
            ys.append(target)
    if not xs:
        raise ValueError("history too short for the requested windows")
    return np.vstack(xs), np.vstack(ys)


def train_forecaster(history, config: ScenarioConfig, epochs_per_day: int,
                     recent_window: int = 6, hidden=(64, 64), l1=1e-4,
                     train_epochs: int = 200, rng: np.random.Generator | None = None,
                     ) -> tuple[ForecastModel, list]:
    """Fit the forecaster on day-streams; needs >= 2 weeks for the week-ago feature.

    Returns the model and the training-loss history.
    """
    if len(history) < 14:
        raise ValueError("need at least two weeks of day-streams")
    days = [aggregate_zone_demand(s, config, epochs_per_day).astype(float)
            for s in history]
    x, y = _forecast_windows(days, recent_window, config.horizon)
    rng = rng or np.random.default_rng(config.rng_seed)
    net = MLP((x.shape[1], *hidden, y.shape[1]), activation="relu", l1=l1, rng=rng)
    losses = net.fit(x, y, epochs=train_epochs, rng=rng)
    return ForecastModel(net, recent_window, config.horizon), losses


def forecast(model: ForecastModel, recent: np.ndarray,
             week_ago: np.ndarray) -> np.ndarray:
    """Nonnegative zone-level demand for the next horizon epochs."""
    return model.predict(recent, week_ago)


def smape(pred: np.ndarray, actual: np.ndarray) -> float:
    """Symmetric mean absolute percentage error; 0-vs-0 cells count as 0."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    denom = np.abs(pred) + np.abs(actual)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(denom > 0, 2.0 * np.abs(pred - actual) / denom, 0.0)
    return float(np.mean(vals))


def naive_last_epoch_forecast(recent: np.ndarray, horizon: int) -> np.ndarray:
    """Baseline that repeats each zone's last observed epoch across the horizon."""
    recent = np.atleast_2d(recent)
    return np.repeat(recent[:, -1:], horizon, axis=1)
