"""Learned substitute for the MPC solve.

The pipeline is sequential: predict per-zone first-epoch multipliers, round
them onto the configured multiplier set, feed the implied demand to the
relocation learner, restore its raw zone margins to an integral balanced
vector capped by idle supply, then disaggregate through the transportation
solver. Every step is polynomial in the zone count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import ScenarioConfig, TravelMatrix, round_half_up
from .mpc import MpcInstance
from .nnet import MLP
from .textio import read_csv, write_csv
from .transport import TransportProblem, solve_transport

FEATURE_SCHEMA_VERSION = 1
LEARNER_SCHEMA_VERSION = 1
_EXACT_DECREMENT_LIMIT = 200_000


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def feature_dim(config: ScenarioConfig) -> int:
    return 5 * config.horizon + config.n_multipliers + 1

def extract_features(instance: MpcInstance) -> np.ndarray:
    """Per-zone feature blocks, shape (Z, 5T + K + 1).

    Layout per zone: idle forecast V over T epochs, outbound and inbound
    baseline demand over T epochs, first-epoch supply-demand gap under every
    multiplier, cumulative supply/demand ratios (the raw cumulative supply
    where cumulative demand is zero, with a flag column marking those cells),
    and the mean travel epochs to other zones.
    """
    v_mat = instance.V.astype(float)
    d_out = instance.D0.sum(axis=1).astype(float)
    d_in = instance.D0.sum(axis=0).astype(float)
    gaps = (v_mat[:, 0][None, :] - instance.Dk[:, :, :, 0].sum(axis=2)).T
    cum_v = v_mat.cumsum(axis=1)
    cum_d = d_out.cumsum(axis=1)
    flags = (cum_d == 0).astype(float)
    ratios = np.where(cum_d > 0, cum_v / np.maximum(cum_d, 1e-300), cum_v)
    z = instance.zones
    lam = instance.travel.lam.astype(float)
    if z > 1:
        lam_mean = (lam.sum(axis=1) - lam.diagonal()) / (z - 1)
    else:
        lam_mean = np.zeros(1)
    feats = np.hstack([v_mat, d_out, d_in, gaps, ratios, flags,
                       lam_mean[:, None]])
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite feature values")
    return feats


def relocation_inputs(features: np.ndarray, pricing_values: np.ndarray,
                      horizon: int) -> np.ndarray:
    """Features plus the first-epoch demand kept under the rounded multipliers."""
    out_first = np.asarray(features)[..., horizon]
    priced = round_half_up(np.asarray(pricing_values) * out_first).astype(float)
    return np.concatenate([features, priced[..., None]], axis=-1)


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PricingPrediction:
    raw: np.ndarray          # unclamped learner output per zone
    values: np.ndarray       # rounded multiplier values
    indices: np.ndarray      # index into the configured multiplier set


def round_to_multiplier(raw: float, multipliers) -> int:
    """Nearest multiplier after clamping to [0, 1]; exact midpoints round to
    the larger multiplier (keep more demand)."""
    x = min(1.0, max(0.0, float(raw)))
    best_k, best_d = 0, float("inf")
    for k, g in enumerate(multipliers):     # multipliers are descending
        d = abs(x - g)
        if d < best_d - 1e-15:
            best_d, best_k = d, k
    return best_k


def predict_pricing(learner, features: np.ndarray, multipliers) -> PricingPrediction:
    raw = learner.predict(features[None])[0, :, 0]
    indices = np.array([round_to_multiplier(r, multipliers) for r in raw])
    values = np.array([multipliers[k] for k in indices])
    return PricingPrediction(raw=raw, values=values, indices=indices)


@dataclass
class AggRelocation:
    """Zone-level relocation margins, raw from the learner and restored."""

    raw_out: np.ndarray
    raw_in: np.ndarray
    out: np.ndarray | None = None      # restored, integral
    into: np.ndarray | None = None
    decrements: int = 0                # balancing decrements applied


def predict_relocation(learner, reloc_features: np.ndarray) -> AggRelocation:
    pred = learner.predict(reloc_features[None])[0]
    return AggRelocation(raw_out=pred[:, 0].copy(), raw_in=pred[:, 1].copy())


def _decrement_uniform(values: np.ndarray, excess: int,
                       rng: np.random.Generator) -> int:
    """Remove `excess` units, one at a time from a uniformly random non-zero
    element; astronomically large excesses are first shaved evenly (the output
    invariants are identical, only the sampling distribution differs there)."""
    done = 0
    while excess > _EXACT_DECREMENT_LIMIT:
        nz = np.where(values > 0)[0]
        per = min(int(values[nz].min()), excess // nz.size)
        if per == 0:
            break
        values[nz] -= per
        excess -= per * nz.size
        done += per * nz.size
    while excess > 0:
        nz = np.where(values > 0)[0]
        pick = nz[rng.integers(nz.size)]
        values[pick] -= 1
        excess -= 1
        done += 1
    return done


def restore_feasibility(raw: AggRelocation, v_first: np.ndarray,
                        rng: np.random.Generator) -> AggRelocation:
    """Three steps: round to nearest nonnegative integers, cap outflows by
    first-epoch idle supply, then decrement random non-zero elements of the
    larger side until the margins balance."""
    v_first = np.asarray(v_first, dtype=np.int64)
    out = np.maximum(round_half_up(raw.raw_out), 0)
    into = np.maximum(round_half_up(raw.raw_in), 0)
    out = np.minimum(out, v_first)
    total_out, total_in = int(out.sum()), int(into.sum())
    decrements = 0
    if total_out > total_in:
        decrements = _decrement_uniform(out, total_out - total_in, rng)
    elif total_in > total_out:
        decrements = _decrement_uniform(into, total_in - total_out, rng)
    return AggRelocation(raw_out=raw.raw_out, raw_in=raw.raw_in,
                         out=out, into=into, decrements=decrements)


def relocation_plan(restored: AggRelocation, travel: TravelMatrix) -> np.ndarray:
    """Disaggregate restored margins into a zone-to-zone plan; self-loops are
    slack and are dropped from the dispatched matrix."""
    problem = TransportProblem.from_travel(restored.out, restored.into, travel)
    plan = solve_transport(problem)
    np.fill_diagonal(plan, 0)
    return plan


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------

class NeuralLearner:
    """Feedforward learner over per-zone feature blocks.

    mode="flat" concatenates all zones into one vector (one network for the
    whole map); mode="zone-shared" applies one network per zone block, which
    is permutation-equivariant and needs far less data.
    """

    def __init__(self, target: str, mode: str = "flat", hidden=(64, 128),
                 zones: int | None = None, feature_dim: int | None = None,
                 seed: int = 0):
        if target not in ("pricing", "relocation"):
            raise ValueError("target must be pricing or relocation")
        if mode not in ("flat", "zone-shared"):
            raise ValueError("mode must be flat or zone-shared")
        self.target = target
        self.mode = mode
        self.hidden = tuple(int(h) for h in hidden)
        self.zones = zones
        self.feature_dim = feature_dim
        self.seed = int(seed)
        self.out_per_zone = 1 if target == "pricing" else 2
        self.activation = "relu" if target == "pricing" else "tanh"
        self.net: MLP | None = None
        self.x_mean = None
        self.x_std = None

    def _flatten(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n, z, f = x.shape
        if self.mode == "flat":
            return x.reshape(n, z * f)
        return x.reshape(n * z, f)

    def fit(self, x: np.ndarray, y: np.ndarray, epochs: int = 200,
            batch_size: int = 32, learning_rate: float = 1e-3):
        """x: (N, Z, F) blocks; y: (N, Z) pricing values or (N, Z, 2) margins."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, z, f = x.shape
        self.zones, self.feature_dim = z, f
        y = y.reshape(n, z, self.out_per_zone)
        xf = self._flatten(x)
        yf = y.reshape(n, z * self.out_per_zone) if self.mode == "flat" \
            else y.reshape(n * z, self.out_per_zone)
        self.x_mean = xf.mean(axis=0)
        self.x_std = np.maximum(xf.std(axis=0), 1e-8)
        xf = (xf - self.x_mean) / self.x_std
        rng = np.random.default_rng(self.seed)
        self.net = MLP((xf.shape[1], *self.hidden, yf.shape[1]),
                       activation=self.activation, rng=rng)
        return self.net.fit(xf, yf, epochs=epochs, batch_size=batch_size,
                            learning_rate=learning_rate, rng=rng)

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.net is None:
            raise RuntimeError("learner is not trained")
        x = np.asarray(x, dtype=float)
        n, z, f = x.shape
        xf = (self._flatten(x) - self.x_mean) / self.x_std
        out = self.net.predict(xf)
        return out.reshape(n, z, self.out_per_zone)

    def save_text(self, path):
        if self.net is None:
            raise RuntimeError("learner is not trained")
        lines = [f"learner_checkpoint_version {LEARNER_SCHEMA_VERSION}",
                 f"target {self.target}",
                 f"mode {self.mode}",
                 f"zones {self.zones}",
                 f"feature_dim {self.feature_dim}",
                 f"hidden {' '.join(str(h) for h in self.hidden)}",
                 f"seed {self.seed}",
                 f"array x_mean {self.x_mean.size}",
                 " ".join(repr(float(v)) for v in self.x_mean),
                 f"array x_std {self.x_std.size}",
                 " ".join(repr(float(v)) for v in self.x_std)]
        lines.extend(self.net.to_lines())
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load_text(cls, path) -> "NeuralLearner":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        head = lines[0].split()
        if head[0] != "learner_checkpoint_version" or int(head[1]) != LEARNER_SCHEMA_VERSION:
            raise ValueError(f"unsupported learner checkpoint {lines[0]!r}")
        learner = cls(target=lines[1].split()[1], mode=lines[2].split()[1],
                      hidden=tuple(int(h) for h in lines[5].split()[1:]),
                      zones=int(lines[3].split()[1]),
                      feature_dim=int(lines[4].split()[1]),
                      seed=int(lines[6].split()[1]))
        learner.x_mean = np.array([float(v) for v in lines[8].split()])
        learner.x_std = np.array([float(v) for v in lines[10].split()])
        learner.net = MLP.from_lines(lines[11:])
        return learner


class ForestLearner:
    """Random-forest baseline with the same block API as the neural learner."""

    def __init__(self, target: str, mode: str = "zone-shared",
                 n_estimators: int = 100, max_depth: int | None = 16,
                 seed: int = 0):
        from sklearn.ensemble import RandomForestRegressor
        self.target = target
        self.mode = mode
        self.out_per_zone = 1 if target == "pricing" else 2
        self.model = RandomForestRegressor(n_estimators=n_estimators,
                                           max_depth=max_depth,
                                           random_state=int(seed))
        self.zones = None
        self._fitted = False

    def _flatten(self, x):
        n, z, f = x.shape
        return x.reshape(n, z * f) if self.mode == "flat" else x.reshape(n * z, f)

    def fit(self, x, y, **_ignored):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n, z, _ = x.shape
        self.zones = z
        y = y.reshape(n, z, self.out_per_zone)
        yf = y.reshape(n, z * self.out_per_zone) if self.mode == "flat" \
            else y.reshape(n * z, self.out_per_zone)
        if yf.shape[1] == 1:
            yf = yf.ravel()
        self.model.fit(self._flatten(x), yf)
        self._fitted = True

    def predict(self, x):
        if not self._fitted:
            raise RuntimeError("learner is not trained")
        x = np.asarray(x, dtype=float)
        n, z, _ = x.shape
        out = np.asarray(self.model.predict(self._flatten(x)))
        return out.reshape(n, z, self.out_per_zone)

    def save(self, path):
        import joblib
        joblib.dump(self, path)


# ---------------------------------------------------------------------------
# training data
# ---------------------------------------------------------------------------

@dataclass
class TrainingSet:
    """(features, first-epoch labels) rows harvested from solved instances."""

    features: np.ndarray        # (N, Z, F)
    pricing_labels: np.ndarray  # (N, Z) multiplier values
    reloc_labels: np.ndarray    # (N, Z, 2) outgoing/incoming margins
    horizon: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.features.shape[0]

    def split(self, holdout_fraction: float, seed: int = 0):
        n = len(self)
        k = max(1, int(round(n * holdout_fraction)))
        order = np.random.default_rng(seed).permutation(n)
        hold, train = order[:k], order[k:]
        return self.subset(train), self.subset(hold)

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.features[idx], self.pricing_labels[idx],
                           self.reloc_labels[idx], self.horizon,
                           dict(self.meta))

    def save_csv(self, path):
        n, z, f = self.features.shape
        header = [f"f_{i}_{k}" for i in range(z) for k in range(f)]
        header += [f"gamma_{i}" for i in range(z)]
        header += [f"yo_{i}" for i in range(z)] + [f"yd_{i}" for i in range(z)]
        rows = []
        for r in range(n):
            row = [repr(float(v)) for v in self.features[r].ravel()]
            row += [repr(float(v)) for v in self.pricing_labels[r]]
            row += [repr(float(v)) for v in self.reloc_labels[r, :, 0]]
            row += [repr(float(v)) for v in self.reloc_labels[r, :, 1]]
            rows.append(row)
        write_csv(path, ["zones", "feature_dim", "horizon"], [[z, f, self.horizon]],
                  "training_set_meta")
        write_csv(str(path) + ".rows", header, rows, "training_set")

    @classmethod
    def load_csv(cls, path) -> "TrainingSet":
        _, meta_rows = read_csv(path)
        z, f, horizon = (int(v) for v in meta_rows[0])
        _, rows = read_csv(str(path) + ".rows")
        n = len(rows)
        feats = np.zeros((n, z, f))
        gammas = np.zeros((n, z))
        reloc = np.zeros((n, z, 2))
        for r, row in enumerate(rows):
            vals = [float(v) for v in row]
            feats[r] = np.asarray(vals[:z * f]).reshape(z, f)
            gammas[r] = vals[z * f:z * f + z]
            reloc[r, :, 0] = vals[z * f + z:z * f + 2 * z]
            reloc[r, :, 1] = vals[z * f + 2 * z:z * f + 3 * z]
        return cls(feats, gammas, reloc, horizon)


def build_training_set(scenarios, solver: str, rng: np.random.Generator,
                       limits=None, epochs_per_stream: int | None = 1,
                       progress=None) -> TrainingSet:
    """Run the simulator over (config, profile, stream) scenarios with an MPC
    policy and harvest (features, first-epoch actions) rows.

    epochs_per_stream=1 keeps one row per scenario; None harvests every epoch
    of each episode.
    """
    from .policies import MpcPolicy
    from .sim import run_episode

    feats, gammas, margins = [], [], []
    horizon = None

    def hook(epoch, instance, gamma_values, plan):
        feats.append(extract_features(instance))
        gammas.append(np.asarray(gamma_values, dtype=float))
        margins.append(np.stack([plan.sum(axis=1), plan.sum(axis=0)], axis=1))

    for config, profile, stream in scenarios:
        horizon = config.horizon
        policy = MpcPolicy(solver=solver, limits=limits)
        episode_epochs = epochs_per_stream
        run_episode(config, stream, policy,
                    episode_epochs=episode_epochs,
                    profile=profile, decision_hook=hook)
        if progress is not None:
            progress(len(feats))
    return TrainingSet(np.asarray(feats), np.asarray(gammas),
                       np.asarray(margins, dtype=float),
                       horizon, meta={"solver": solver})


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_learner(learner, features: np.ndarray, labels: np.ndarray,
                     multipliers=None) -> dict:
    """Element-wise MSE, plus rounded 0-1 loss when multipliers are given."""
    if len(features) == 0:
        raise ValueError("empty holdout")
    pred = learner.predict(features)
    labels = np.asarray(labels, dtype=float)
    pred_cmp = pred.reshape(labels.shape)
    metrics = {"mse": float(np.mean((pred_cmp - labels) ** 2))}
    if multipliers is not None:
        rounded = np.array([[multipliers[round_to_multiplier(v, multipliers)]
                             for v in row]
                            for row in pred_cmp.reshape(len(features), -1)])
        truth = labels.reshape(len(features), -1)
        metrics["zero_one"] = float(np.mean(np.abs(rounded - truth) > 1e-9))
    return metrics


def majority_class_loss(pricing_labels: np.ndarray) -> float:
    """0-1 loss of always predicting the most frequent multiplier value."""
    values, counts = np.unique(np.asarray(pricing_labels).ravel(),
                               return_counts=True)
    return float(1.0 - counts.max() / counts.sum())


def zero_prediction_mse(reloc_labels: np.ndarray) -> float:
    return float(np.mean(np.asarray(reloc_labels, dtype=float) ** 2))


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

class ProxyPolicy:
    """Sequential prediction + restoration + transportation disaggregation."""

    def __init__(self, pricing_learner, reloc_learner, config: ScenarioConfig,
                 travel: TravelMatrix, restoration_seed: int = 0):
        self.pricing_learner = pricing_learner
        self.reloc_learner = reloc_learner
        self.config = config
        self.travel = travel
        self.restoration_seed = int(restoration_seed)
        self.last_latency_s = 0.0

    def decide(self, instance: MpcInstance, epoch: int):
        from .core import RandomStreams
        start = time.perf_counter()
        feats = extract_features(instance)
        pricing = predict_pricing(self.pricing_learner, feats,
                                  self.config.multipliers)
        rfeats = relocation_inputs(feats, pricing.values, self.config.horizon)
        raw = predict_relocation(self.reloc_learner, rfeats)
        rng = RandomStreams(self.restoration_seed).stream("restoration", epoch)
        restored = restore_feasibility(raw, instance.V[:, 0], rng)
        plan = relocation_plan(restored, self.travel)
        self.last_latency_s = time.perf_counter() - start
        return pricing.values, plan
