"""MIP interchange export (LP text format) and instance/solution text dumps.

The exported program is the full formulation with big-M relocation gating
binaries and explicit idle-carry variables, so any external MIP solver can
cross-check the built-in search. Nothing in the package depends on one.
"""

from __future__ import annotations

import numpy as np

from ..core import ScenarioConfig
from ..textio import scenario_from_ini, scenario_to_ini
from .model import MpcInstance, MpcSolution, make_instance, weight_tables

INSTANCE_SCHEMA_VERSION = 1
SOLUTION_SCHEMA_VERSION = 1


def build_mip(instance: MpcInstance):
    """Structured MIP: (variables, objective, constraints).

    variables: name -> ("binary" | "integer"), objective: name -> coefficient
    (maximization), constraints: (name, {var: coef}, sense, rhs) with sense in
    {"=", "<="}.
    """
    z, t_max = instance.zones, instance.horizon
    s = instance.config.patience
    k_count = instance.config.n_multipliers
    lam = instance.travel.lam
    big_m = instance.config.big_m
    qp, qr, valid = weight_tables(instance.config, instance.travel)
    w_share = instance.config.rideshare

    variables = {}
    objective = {}
    for k in range(k_count):
        for i in range(z):
            for t in range(t_max):
                variables[f"p_{k}_{i}_{t}"] = "binary"
    for i in range(z):
        for t in range(t_max):
            variables[f"l_{i}_{t}"] = "binary"
            variables[f"w_{i}_{t}"] = "integer"
    for i in range(z):
        for j in range(z):
            for t in range(t_max):
                variables[f"v_{i}_{j}_{t}"] = "integer"
                if i != j:
                    variables[f"xr_{i}_{j}_{t}"] = "integer"
                    objective[f"xr_{i}_{j}_{t}"] = -float(qr[i, j, t])
                for rho in range(t_max):
                    if valid[t, rho]:
                        name = f"xp_{i}_{j}_{t}_{rho}"
                        variables[name] = "integer"
                        objective[name] = float(qp[t, rho]) * w_share

    constraints = []
    for i in range(z):
        for t in range(t_max):
            constraints.append((f"one_price_{i}_{t}",
                                {f"p_{k}_{i}_{t}": 1.0 for k in range(k_count)},
                                "=", 1.0))
    for i in range(z):
        for j in range(z):
            for t in range(t_max):
                row = {f"v_{i}_{j}_{t}": 1.0}
                for k in range(k_count):
                    coef = -float(instance.Dk[k, i, j, t])
                    if coef:
                        row[f"p_{k}_{i}_{t}"] = coef
                constraints.append((f"link_{i}_{j}_{t}", row, "=", 0.0))
                srow = {f"xp_{i}_{j}_{t}_{rho}": 1.0
                        for rho in range(t_max) if valid[t, rho]}
                srow[f"v_{i}_{j}_{t}"] = -1.0
                mandatory = instance.service_guarantee and t <= t_max - s
                constraints.append((f"serve_{i}_{j}_{t}", srow,
                                    "=" if mandatory else "<=", 0.0))
    for i in range(z):
        for t in range(t_max):
            row = {}
            for j in range(z):
                for t0 in range(t_max):
                    if valid[t0, t]:
                        row[f"xp_{i}_{j}_{t0}_{t}"] = \
                            row.get(f"xp_{i}_{j}_{t0}_{t}", 0.0) + 1.0
                if j != i:
                    row[f"xr_{i}_{j}_{t}"] = 1.0
            row[f"w_{i}_{t}"] = 1.0
            if t > 0:
                row[f"w_{i}_{t - 1}"] = row.get(f"w_{i}_{t - 1}", 0.0) - 1.0
            for j in range(z):
                shift = int(lam[j, i])
                rho = t - shift
                if rho >= 0:
                    for t0 in range(t_max):
                        if valid[t0, rho]:
                            name = f"xp_{j}_{i}_{t0}_{rho}"
                            row[name] = row.get(name, 0.0) - 1.0
                    if j != i:
                        name = f"xr_{j}_{i}_{rho}"
                        row[name] = row.get(name, 0.0) - 1.0
            constraints.append((f"balance_{i}_{t}", row, "=",
                                float(instance.V[i, t])))
    for i in range(z):
        for t in range(t_max):
            row = {f"xr_{i}_{j}_{t}": 1.0 for j in range(z) if j != i}
            row[f"l_{i}_{t}"] = -float(big_m)
            constraints.append((f"gate_out_{i}_{t}", row, "<=", 0.0))
            brow = {}
            rhs = float(big_m)
            for j in range(z):
                for t0 in range(t_max):
                    if valid[t0, t]:    # window of t0 covers epoch t
                        brow[f"v_{i}_{j}_{t0}"] = \
                            brow.get(f"v_{i}_{j}_{t0}", 0.0) + 1.0
                        for rho in range(t0, t + 1):
                            if valid[t0, rho]:
                                name = f"xp_{i}_{j}_{t0}_{rho}"
                                brow[name] = brow.get(name, 0.0) - 1.0
            brow[f"l_{i}_{t}"] = float(big_m)
            constraints.append((f"gate_backlog_{i}_{t}", brow, "<=", rhs))
    return variables, objective, constraints


def _lp_terms(coeffs: dict) -> str:
    parts = []
    for name in sorted(coeffs):
        c = coeffs[name]
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {abs(c)!r} {name}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def export_lp(instance: MpcInstance, path):
    """Write the program in CPLEX LP text format."""
    variables, objective, constraints = build_mip(instance)
    lines = ["\\ mpc program export, lp_schema=1", "Maximize",
             f" obj: {_lp_terms(objective)}", "Subject To"]
    for name, row, sense, rhs in constraints:
        op = "=" if sense == "=" else "<="
        lines.append(f" {name}: {_lp_terms(row)} {op} {rhs!r}")
    generals = sorted(n for n, kind in variables.items() if kind == "integer")
    binaries = sorted(n for n, kind in variables.items() if kind == "binary")
    if generals:
        lines.append("Generals")
        lines.append(" " + " ".join(generals))
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# text dumps
# ---------------------------------------------------------------------------

def _write_array(fh, name: str, arr: np.ndarray):
    arr = np.asarray(arr)
    fh.write(f"array {name} {' '.join(str(d) for d in arr.shape)}\n")
    fh.write(" ".join(str(int(v)) for v in arr.ravel()) + "\n")


def _read_array(lines, pos):
    head = lines[pos].split()
    shape = tuple(int(v) for v in head[2:])
    arr = np.array([int(v) for v in lines[pos + 1].split()],
                   dtype=np.int64).reshape(shape)
    return head[1], arr, pos + 2


def dump_instance(instance: MpcInstance, path):
    with open(path, "w") as fh:
        fh.write(f"# mpc_instance_schema={INSTANCE_SCHEMA_VERSION}\n")
        fh.write(f"service_guarantee {int(instance.service_guarantee)}\n")
        _write_array(fh, "V", instance.V)
        _write_array(fh, "D0", instance.D0)
        fh.write(scenario_to_ini(instance.config))


def load_instance(path) -> MpcInstance:
    from ..core import build_travel_matrix
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines[0].endswith(f"schema={INSTANCE_SCHEMA_VERSION}"):
        raise ValueError(f"unsupported instance dump header {lines[0]!r}")
    guarantee = bool(int(lines[1].split()[1]))
    _, v_arr, pos = _read_array(lines, 2)
    _, d0, pos = _read_array(lines, pos)
    config = scenario_from_ini("\n".join(lines[pos:]))
    travel = build_travel_matrix(config, config.epoch_seconds)
    return make_instance(v_arr, d0, config, travel, service_guarantee=guarantee)


def dump_solution(solution: MpcSolution, path):
    with open(path, "w") as fh:
        fh.write(f"# mpc_solution_schema={SOLUTION_SCHEMA_VERSION}\n")
        fh.write(f"status {solution.status}\n")
        fh.write(f"objective {solution.objective!r}\n")
        fh.write(f"nodes {solution.nodes_explored}\n")
        for name in ("p", "xr", "xp", "v"):
            _write_array(fh, name, getattr(solution, name))
