"""Flat human-readable text formats: scenario configs (INI), seed ranges,
and commented CSV tables. The CLI owns plan parsing on top of these."""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import fields

from .core import ScenarioConfig

SCENARIO_SCHEMA_VERSION = 1

_INT_FIELDS = {
    "zone_count", "epoch_seconds", "horizon", "patience", "big_m",
    "fleet_size", "vehicle_capacity", "router_batch_seconds", "rng_seed",
    "match_patience_epochs", "pickup_patience_epochs", "max_pickups_per_route",
}
_FLOAT_FIELDS = {
    "rideshare", "relocation_weight_scale", "detour_factor",
    "penalty_base_seconds", "penalty_escalation", "grid_cell_seconds",
}


def _format_value(name: str, value) -> str:
    if name == "multipliers":
        return ", ".join(repr(g) for g in value)
    if name == "service_weight_base":
        return f"{value[0]!r}, {value[1]!r}"
    if name == "zone_coords":
        return "; ".join(f"{x!r}:{y!r}" for x, y in value)
    return str(value)


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name == "multipliers":
        return tuple(float(v) for v in raw.split(","))
    if name == "service_weight_base":
        a, b = raw.split(",")
        return (float(a), float(b))
    if name == "zone_coords":
        if not raw:
            return ()
        pairs = [p for p in raw.split(";") if p.strip()]
        return tuple(tuple(float(v) for v in p.split(":")) for p in pairs)
    return raw


def scenario_to_ini(config: ScenarioConfig) -> str:
    lines = ["[scenario]", f"schema_version = {SCENARIO_SCHEMA_VERSION}"]
    for f in fields(ScenarioConfig):
        lines.append(f"{f.name} = {_format_value(f.name, getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def save_scenario_config(config: ScenarioConfig, path):
    with open(path, "w") as fh:
        fh.write(scenario_to_ini(config))


def scenario_from_items(items) -> ScenarioConfig:
    """Build a config from (key, raw-string) pairs of a [scenario] section."""
    items = dict(items)
    version = int(items.pop("schema_version", "-1"))
    if version != SCENARIO_SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version {version}")
    known = {f.name for f in fields(ScenarioConfig)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ValueError(f"unknown scenario field {key!r}")
        kwargs[key] = _parse_value(key, raw)
    return ScenarioConfig(**kwargs)


def scenario_from_ini(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    if "scenario" not in parser:
        raise ValueError("missing [scenario] section")
    return scenario_from_items(parser["scenario"].items())


def load_scenario_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_ini(fh.read())


def parse_seed_range(spec: str) -> list[int]:
    """Seed lists: '0:20' (half-open), '3..7' (inclusive), or '1,4,9'."""
    spec = spec.strip()
    if ":" in spec:
        lo, hi = spec.split(":")
        return list(range(int(lo), int(hi)))
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in spec.split(",") if v.strip()]


def write_csv(path, header, rows, schema_name: str, version: int = 1):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {schema_name}_schema={version}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("".join(lines)))
    rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]
