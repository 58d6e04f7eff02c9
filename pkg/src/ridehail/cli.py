"""Experiment harness: generate -> solve -> train -> evaluate -> report.

Every stage is idempotent (a completed stage is skipped unless --force) and
every run directory carries the exact scenario config, the seeds, and a code
version stamp. Exit codes: 0 success, 2 plan error, 3 missing dependency
artifact.
"""

from __future__ import annotations

import argparse
import configparser
import math
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import RandomStreams, ScenarioConfig, build_travel_matrix
from .demand import RequestStream, generate_scenario_demand, make_profile, perturb_stream
from .mpc import SolveLimits, build_instance, export_lp
from .policies import make_policy
from .proxy import (ForestLearner, NeuralLearner, TrainingSet,
                    build_training_set, evaluate_learner, majority_class_loss,
                    relocation_inputs, round_to_multiplier, zero_prediction_mse)
from .sim import Metrics, run_episode
from .textio import parse_seed_range, read_csv, scenario_from_items, \
    save_scenario_config, write_csv

PLAN_SCHEMA_VERSION = 1


class PlanError(Exception):
    pass


class MissingArtifactError(Exception):
    pass


def _coerce_profile_param(key: str, raw: str):
    raw = raw.strip()
    if key in ("hub_zones", "residential", "business"):
        return tuple(int(v) for v in raw.split(","))
    if key == "rates":
        rows = [r for r in raw.split(";") if r.strip()]
        return np.array([[float(v) for v in r.split(",")] for r in rows])
    if key in ("peak_epoch", "peak_width", "peak_boost", "rate", "spoke_rate",
               "hub_rate", "to_hub_fraction", "residential_rate",
               "business_rate"):
        return float(raw)
    raise PlanError(f"unknown demand parameter {key!r}")


@dataclass
class ExperimentPlan:
    name: str
    output_dir: Path
    config: ScenarioConfig
    pattern: str
    profile_params: dict
    stream_epochs: int
    base_seeds: list
    perturbations_per_base: int
    solver: str = "heuristic"
    solver_moves: int = 200
    epochs_per_stream: int | None = None
    learner_mode: str = "zone-shared"
    hidden: tuple = (64, 128)
    train_epochs: int = 200
    holdout_fraction: float = 0.25
    train_seed: int = 0
    policies: list = field(default_factory=lambda: ["mpc-heuristic"])
    eval_seeds: list = field(default_factory=lambda: [0])
    episode_epochs: int = 12
    cluster_map: list | None = None

    @classmethod
    def load(cls, path, seed_range: str | None = None,
             stage: str | None = None) -> "ExperimentPlan":
        path = Path(path)
        if not path.exists():
            raise PlanError(f"plan file {path} does not exist")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise PlanError(f"malformed plan file: {exc}") from exc
        for section in ("plan", "scenario", "demand"):
            if section not in parser:
                raise PlanError(f"plan is missing the [{section}] section")
        plan_sec = parser["plan"]
        if int(plan_sec.get("schema_version", "-1")) != PLAN_SCHEMA_VERSION:
            raise PlanError("unsupported plan schema_version")
        if "output_dir" not in plan_sec:
            raise PlanError("plan needs output_dir")
        try:
            config = scenario_from_items(parser["scenario"].items())
        except (ValueError, TypeError) as exc:
            raise PlanError(f"bad scenario section: {exc}") from exc
        demand_sec = dict(parser["demand"].items())
        pattern = demand_sec.pop("pattern", None)
        if pattern is None:
            raise PlanError("demand section needs a pattern")
        stream_epochs = int(demand_sec.pop("epochs", "12"))
        params = {k: _coerce_profile_param(k, v) for k, v in demand_sec.items()}

        gen = parser["generate"] if "generate" in parser else {}
        base_seeds = parse_seed_range(gen.get("base_seeds", "0:4"))
        perts = int(gen.get("perturbations_per_base", "0"))
        solve = parser["solve"] if "solve" in parser else {}
        train = parser["train"] if "train" in parser else {}
        ev = parser["evaluate"] if "evaluate" in parser else {}
        cluster = parser["cluster"] if "cluster" in parser else {}

        eps = solve.get("epochs_per_stream", "")
        plan = cls(
            name=plan_sec.get("name", path.stem),
            output_dir=(path.parent / plan_sec["output_dir"]).resolve(),
            config=config,
            pattern=pattern,
            profile_params=params,
            stream_epochs=stream_epochs,
            base_seeds=base_seeds,
            perturbations_per_base=perts,
            solver=solve.get("solver", "heuristic"),
            solver_moves=int(solve.get("moves", "200")),
            epochs_per_stream=int(eps) if str(eps).strip() else None,
            learner_mode=train.get("mode", "zone-shared"),
            hidden=tuple(int(h) for h in train.get("hidden", "64,128").split(",")),
            train_epochs=int(train.get("train_epochs", "200")),
            holdout_fraction=float(train.get("holdout_fraction", "0.25")),
            train_seed=int(train.get("seed", "0")),
            policies=[p.strip() for p in ev.get("policies", "mpc-heuristic").split(",")],
            eval_seeds=parse_seed_range(ev.get("seeds", "0:4")),
            episode_epochs=int(ev.get("episode_epochs", str(stream_epochs))),
            cluster_map=[int(v) for v in cluster.get("map", "").split(",")]
            if cluster.get("map", "").strip() else None,
        )
        if plan.solver not in ("heuristic", "exact"):
            raise PlanError(f"unknown solver {plan.solver!r}")
        for pol in plan.policies:
            if pol not in ("mpc-exact", "mpc-heuristic", "mpc-clustered",
                           "relocation-only", "proxy", "none"):
                raise PlanError(f"unknown policy {pol!r}")
        if "mpc-clustered" in plan.policies and plan.cluster_map is None:
            raise PlanError("mpc-clustered policy needs a [cluster] map")
        if plan.cluster_map is not None and len(plan.cluster_map) != config.zone_count:
            raise PlanError("cluster map length must equal zone_count")
        if seed_range is not None:
            seeds = parse_seed_range(seed_range)
            if stage == "generate":
                plan.base_seeds = seeds
            elif stage == "evaluate":
                plan.eval_seeds = seeds
        return plan

    def profile(self):
        return make_profile(self.pattern, self.config, **self.profile_params)

    # artifact paths ------------------------------------------------------

    def streams_dir(self) -> Path:
        return self.output_dir / "streams"

    def stream_manifest(self) -> Path:
        return self.streams_dir() / "manifest.csv"

    def dataset_path(self) -> Path:
        return self.output_dir / "dataset" / "training.csv"

    def models_dir(self) -> Path:
        return self.output_dir / "models"

    def metrics_path(self) -> Path:
        return self.output_dir / "eval" / "metrics.csv"

    def report_dir(self) -> Path:
        return self.output_dir / "report"


def _write_run_manifest(plan: ExperimentPlan, plan_path: Path):
    plan.output_dir.mkdir(parents=True, exist_ok=True)
    save_scenario_config(plan.config, plan.output_dir / "scenario.ini")
    copied = plan.output_dir / "plan.ini"
    if copied.resolve() != Path(plan_path).resolve():
        shutil.copyfile(plan_path, copied)
    lines = ["[run]",
             f"schema_version = {PLAN_SCHEMA_VERSION}",
             f"name = {plan.name}",
             f"code_version = ridehail {__version__}",
             f"base_seeds = {','.join(map(str, plan.base_seeds))}",
             f"eval_seeds = {','.join(map(str, plan.eval_seeds))}",
             f"rng_seed = {plan.config.rng_seed}"]
    (plan.output_dir / "manifest.ini").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_generate(plan: ExperimentPlan, force: bool = False) -> int:
    if plan.stream_manifest().exists() and not force:
        print(f"generate: up to date ({plan.stream_manifest()})")
        return 0
    out = plan.streams_dir()
    out.mkdir(parents=True, exist_ok=True)
    profile = plan.profile()
    streams = RandomStreams(plan.config.rng_seed)
    rows = []
    for seed in plan.base_seeds:
        base = generate_scenario_demand(plan.config, profile,
                                        streams.stream("demand", seed),
                                        plan.stream_epochs)
        name = f"base_{seed}.csv"
        base.save_csv(out / name)
        rows.append([name, seed, "base", "0.0"])
        pert_rng = streams.stream("perturbation", seed)
        for k in range(plan.perturbations_per_base):
            pct = float(pert_rng.uniform(-5.0, 5.0))
            variant = perturb_stream(base, pct, plan.config, profile,
                                     pert_rng, plan.stream_epochs)
            vname = f"pert_{seed}_{k}.csv"
            variant.save_csv(out / vname)
            rows.append([vname, seed, "perturbed", repr(pct)])
    write_csv(plan.stream_manifest(), ["file", "base_seed", "kind", "percent"],
              rows, "stream_manifest")
    print(f"generate: wrote {len(rows)} streams to {out}")
    return 0


def _load_streams(plan: ExperimentPlan):
    if not plan.stream_manifest().exists():
        raise MissingArtifactError(f"stream manifest {plan.stream_manifest()} "
                                   "(run the generate stage first)")
    _, rows = read_csv(plan.stream_manifest())
    return [(row[0], RequestStream.load_csv(plan.streams_dir() / row[0]))
            for row in rows]


def _solve_one(args):
    config, pattern, params, name, stream_path, solver, moves, epochs = args
    profile = make_profile(pattern, config, **params)
    stream = RequestStream.load_csv(stream_path)
    ts = build_training_set([(config, profile, stream)], solver,
                            np.random.default_rng(0),
                            limits=SolveLimits(moves=moves),
                            epochs_per_stream=epochs)
    return name, ts


def cmd_solve(plan: ExperimentPlan, force: bool = False, jobs: int = 1,
              export_mip: bool = False) -> int:
    if plan.dataset_path().exists() and not force:
        print(f"solve: up to date ({plan.dataset_path()})")
        return 0
    entries = _load_streams(plan)
    plan.dataset_path().parent.mkdir(parents=True, exist_ok=True)
    work = [(plan.config, plan.pattern, plan.profile_params, name,
             str(plan.streams_dir() / name), plan.solver, plan.solver_moves,
             plan.epochs_per_stream)
            for name, _ in entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_solve_one, work))
        parts = [results[name] for name, _ in entries]
    else:
        parts = [_solve_one(w)[1] for w in work]
    merged = TrainingSet(
        features=np.concatenate([p.features for p in parts]),
        pricing_labels=np.concatenate([p.pricing_labels for p in parts]),
        reloc_labels=np.concatenate([p.reloc_labels for p in parts]),
        horizon=plan.config.horizon,
        meta={"solver": plan.solver})
    merged.save_csv(plan.dataset_path())
    if export_mip:
        mip_dir = plan.output_dir / "dataset" / "mip"
        mip_dir.mkdir(parents=True, exist_ok=True)
        profile = plan.profile()
        travel = build_travel_matrix(plan.config, plan.config.epoch_seconds)
        from .sim import _rate_demand_oracle
        from .core import FleetSnapshot
        oracle = _rate_demand_oracle(plan.config, profile)
        idle = np.zeros(plan.config.zone_count, dtype=np.int64)
        idle[0] = plan.config.fleet_size
        inst = build_instance(oracle(0), FleetSnapshot(idle), plan.config, travel)
        export_lp(inst, mip_dir / "first_epoch.lp")
    print(f"solve: {len(merged)} labeled instances -> {plan.dataset_path()}")
    return 0


def _rounded_pricing(learner, features, multipliers):
    raw = learner.predict(features)[:, :, 0]
    values = np.empty_like(raw)
    for r in range(raw.shape[0]):
        for i in range(raw.shape[1]):
            values[r, i] = multipliers[round_to_multiplier(raw[r, i], multipliers)]
    return values


def cmd_train(plan: ExperimentPlan, force: bool = False) -> int:
    models = plan.models_dir()
    done = models / "validation.csv"
    if done.exists() and not force:
        print(f"train: up to date ({done})")
        return 0
    if not plan.dataset_path().exists():
        raise MissingArtifactError(f"training set {plan.dataset_path()} "
                                   "(run the solve stage first)")
    dataset = TrainingSet.load_csv(plan.dataset_path())
    models.mkdir(parents=True, exist_ok=True)
    train, hold = dataset.split(plan.holdout_fraction, seed=plan.train_seed)
    mult = plan.config.multipliers

    pricing = NeuralLearner("pricing", mode=plan.learner_mode,
                            hidden=plan.hidden, seed=plan.train_seed)
    hist_p = pricing.fit(train.features, train.pricing_labels,
                         epochs=plan.train_epochs)
    pricing.save_text(models / "pricing_nn.txt")
    write_csv(models / "pricing_nn_history.csv", ["epoch", "train_mse"],
              [[k + 1, repr(float(v))] for k, v in enumerate(hist_p)],
              "training_history")

    reloc_in_train = relocation_inputs(
        train.features, _rounded_pricing(pricing, train.features, mult),
        plan.config.horizon)
    reloc_in_hold = relocation_inputs(
        hold.features, _rounded_pricing(pricing, hold.features, mult),
        plan.config.horizon)
    reloc = NeuralLearner("relocation", mode=plan.learner_mode,
                          hidden=plan.hidden, seed=plan.train_seed + 1)
    hist_r = reloc.fit(reloc_in_train, train.reloc_labels,
                       epochs=plan.train_epochs)
    reloc.save_text(models / "relocation_nn.txt")
    write_csv(models / "relocation_nn_history.csv", ["epoch", "train_mse"],
              [[k + 1, repr(float(v))] for k, v in enumerate(hist_r)],
              "training_history")

    pricing_rf = ForestLearner("pricing", mode=plan.learner_mode,
                               seed=plan.train_seed)
    pricing_rf.fit(train.features, train.pricing_labels)
    pricing_rf.save(models / "pricing_forest.joblib")
    reloc_rf = ForestLearner("relocation", mode=plan.learner_mode,
                             seed=plan.train_seed + 1)
    reloc_rf.fit(reloc_in_train, train.reloc_labels)
    reloc_rf.save(models / "relocation_forest.joblib")

    rows = []
    m = evaluate_learner(pricing, hold.features, hold.pricing_labels, mult)
    rows.append(["nn", "pricing", repr(m["mse"]), repr(m["zero_one"])])
    m = evaluate_learner(pricing_rf, hold.features, hold.pricing_labels, mult)
    rows.append(["forest", "pricing", repr(m["mse"]), repr(m["zero_one"])])
    rows.append(["majority", "pricing", "",
                 repr(float(majority_class_loss(hold.pricing_labels)))])
    m = evaluate_learner(reloc, reloc_in_hold, hold.reloc_labels)
    rows.append(["nn", "relocation", repr(m["mse"]), ""])
    m = evaluate_learner(reloc_rf, reloc_in_hold, hold.reloc_labels)
    rows.append(["forest", "relocation", repr(m["mse"]), ""])
    rows.append(["zero", "relocation",
                 repr(float(zero_prediction_mse(hold.reloc_labels))), ""])
    write_csv(done, ["learner", "target", "mse", "zero_one"], rows,
              "validation_table")
    print(f"train: holdout {len(hold)} rows -> {done}")
    for row in rows:
        print("  ", " ".join(str(c) for c in row))
    return 0


def _evaluate_one(args):
    (config, pattern, params, policy_name, seed, episode_epochs,
     cluster_map, models_dir, solver_moves) = args
    profile = make_profile(pattern, config, **params)
    kwargs = {}
    if policy_name == "proxy":
        kwargs["pricing_learner"] = NeuralLearner.load_text(
            Path(models_dir) / "pricing_nn.txt")
        kwargs["reloc_learner"] = NeuralLearner.load_text(
            Path(models_dir) / "relocation_nn.txt")
        kwargs["restoration_seed"] = seed
    policy = make_policy(policy_name, config,
                         limits=SolveLimits(moves=solver_moves),
                         merge_map=cluster_map, **kwargs)
    stream = generate_scenario_demand(
        config, profile, RandomStreams(config.rng_seed).stream("demand", seed),
        episode_epochs)
    metrics = run_episode(config, stream, policy,
                          episode_epochs=episode_epochs, profile=profile,
                          seed=seed)
    metrics.policy = policy_name
    metrics.seed = seed
    return metrics.to_row()


def cmd_evaluate(plan: ExperimentPlan, force: bool = False, jobs: int = 1) -> int:
    out = plan.metrics_path()
    if out.exists() and not force:
        print(f"evaluate: up to date ({out})")
        return 0
    if "proxy" in plan.policies:
        for fname in ("pricing_nn.txt", "relocation_nn.txt"):
            if not (plan.models_dir() / fname).exists():
                raise MissingArtifactError(
                    f"learner checkpoint {plan.models_dir() / fname} "
                    "(run the train stage first)")
    out.parent.mkdir(parents=True, exist_ok=True)
    work = [(plan.config, plan.pattern, plan.profile_params, pol, seed,
             plan.episode_epochs, plan.cluster_map, str(plan.models_dir()),
             plan.solver_moves)
            for pol in plan.policies for seed in plan.eval_seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_evaluate_one, work))
    else:
        rows = [_evaluate_one(w) for w in work]
    write_csv(out, Metrics.HEADER, rows, "metrics", 1)
    print(f"evaluate: {len(rows)} episodes -> {out}")
    return 0


def cmd_report(plan: ExperimentPlan, force: bool = False) -> int:
    from scipy import stats

    out_dir = plan.report_dir()
    summary = out_dir / "summary.csv"
    if summary.exists() and not force:
        print(f"report: up to date ({summary})")
        return 0
    if not plan.metrics_path().exists():
        raise MissingArtifactError(f"metrics {plan.metrics_path()} "
                                   "(run the evaluate stage first)")
    header, rows = read_csv(plan.metrics_path())
    if not rows:
        raise MissingArtifactError("metrics file is empty; nothing to report")
    col = {name: k for k, name in enumerate(header)}
    panels = {"dropout_pct": "dropout", "served_riders": "served",
              "mean_wait_s": "wait", "relocations": "relocations"}
    out_dir.mkdir(parents=True, exist_ok=True)
    by_policy = {}
    for row in rows:
        by_policy.setdefault(row[col["policy"]], []).append(row)
    summary_rows = []
    for metric, panel in panels.items():
        panel_rows = []
        for policy in sorted(by_policy):
            vals = np.array([float(r[col[metric]]) for r in by_policy[policy]])
            n = vals.size
            mean = float(vals.mean())
            if n > 1 and vals.std(ddof=1) > 0:
                half = float(stats.t.ppf(0.975, n - 1)
                             * vals.std(ddof=1) / math.sqrt(n))
            else:
                half = 0.0
            panel_rows.append([policy, n, repr(mean), repr(half)])
            summary_rows.append([panel, policy, n, repr(mean), repr(half)])
        write_csv(out_dir / f"{panel}.csv",
                  ["policy", "episodes", "mean", "ci95_half_width"],
                  panel_rows, "report_panel")
    write_csv(summary, ["panel", "policy", "episodes", "mean",
                        "ci95_half_width"], summary_rows, "report_summary")
    print(f"report: wrote {summary}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ridehail",
        description="MPC pricing/relocation experiments: generate demand, "
                    "solve for labels, train the proxy, evaluate policies, "
                    "report.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "solve", "train", "evaluate", "report"):
        p = sub.add_parser(name)
        p.add_argument("--plan", required=True, help="plan INI file")
        p.add_argument("--seed-range", default=None,
                       help="override stage seeds, e.g. 0:20")
        p.add_argument("--force", action="store_true",
                       help="re-run even if outputs exist")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for independent work items")
        p.add_argument("--export-mip", action="store_true",
                       help="also write an LP-format dump during solve")
    args = parser.parse_args(argv)
    try:
        plan = ExperimentPlan.load(args.plan, seed_range=args.seed_range,
                                   stage=args.command)
        _write_run_manifest(plan, Path(args.plan))
    except PlanError as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "generate":
            return cmd_generate(plan, force=args.force)
        if args.command == "solve":
            return cmd_solve(plan, force=args.force, jobs=args.jobs,
                             export_mip=args.export_mip)
        if args.command == "train":
            return cmd_train(plan, force=args.force)
        if args.command == "evaluate":
            return cmd_evaluate(plan, force=args.force, jobs=args.jobs)
        if args.command == "report":
            return cmd_report(plan, force=args.force)
    except MissingArtifactError as exc:
        print(f"missing dependency artifact: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
