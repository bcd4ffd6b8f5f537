"""YAML instance files and CSV / JSONL result writers."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import yaml

from .model import InstanceError, ProblemInstance, Solution

INSTANCE_FIELDS = ("A", "B", "Q", "R", "P", "x0", "eps", "N")
_OPTIONAL = {"P"}  # defaults to Q


def _matrix(value, name: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise InstanceError(f"{name}: expected a non-empty list of rows")
    rows = [r if isinstance(r, list) else [r] for r in value]
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InstanceError(f"{name}: row {i} has {len(r)} entries, expected {width}")
        for v in r:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InstanceError(f"{name}: row {i} has a non-numeric entry {v!r}")
    return np.array(rows, dtype=float)


def instance_from_dict(d: dict) -> ProblemInstance:
    if not isinstance(d, dict):
        raise InstanceError("instance: expected a mapping of named fields")
    unknown = set(d) - set(INSTANCE_FIELDS)
    if unknown:
        raise InstanceError(f"unknown field(s): {', '.join(sorted(unknown))}")
    missing = [k for k in INSTANCE_FIELDS if k not in d and k not in _OPTIONAL]
    if missing:
        raise InstanceError(f"missing field(s): {', '.join(missing)}")
    A = _matrix(d["A"], "A")
    B = _matrix(d["B"], "B")
    Q = _matrix(d["Q"], "Q")
    R = _matrix(d["R"] if isinstance(d["R"], list) else [[d["R"]]], "R")
    P = _matrix(d["P"], "P") if "P" in d else Q
    x0 = d["x0"]
    if not isinstance(x0, list):
        raise InstanceError("x0: expected a list")
    x0 = _matrix([x0], "x0")[0]
    if isinstance(d["N"], bool) or not isinstance(d["N"], int):
        raise InstanceError(f"N: must be an integer, got {d['N']!r}")
    if isinstance(d["eps"], bool) or not isinstance(d["eps"], (int, float)):
        raise InstanceError(f"eps: must be a number, got {d['eps']!r}")
    return ProblemInstance(A=A, B=B, Q=Q, R=R, P=P, x0=x0, eps=d["eps"], N=d["N"])


def instance_to_dict(inst: ProblemInstance) -> dict:
    # float() of a float64 round-trips exactly through yaml's repr-based float emitter
    def rows(M):
        return [[float(v) for v in r] for r in np.atleast_2d(M)]
    return {"A": rows(inst.A), "B": rows(inst.B), "Q": rows(inst.Q), "R": rows(inst.R),
            "P": rows(inst.P), "x0": [float(v) for v in inst.x0], "eps": float(inst.eps), "N": int(inst.N)}


def load_instance(path) -> ProblemInstance:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InstanceError(f"{path}: invalid YAML ({exc})") from None
    return instance_from_dict(data)


def dump_instance(inst: ProblemInstance) -> str:
    return yaml.safe_dump(instance_to_dict(inst), sort_keys=False, default_flow_style=None)


def save_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(dump_instance(inst))


def header_lines(config: dict) -> str:
    """Comment header embedding the resolved run configuration."""
    return "config: " + json.dumps(config, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    return repr(v)


def write_csv(path, columns, rows, config: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_lines(config)}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_trajectory(path, sol: Solution, config: dict) -> None:
    X, U = sol.states, sol.inputs
    n, m = X.shape[1], U.shape[1]
    cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
    rows = []
    for t in range(X.shape[0]):
        u = U[t] if t < U.shape[0] else np.full(m, np.nan)
        rows.append([t, *X[t], *u])
    write_csv(path, cols, rows, config)


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")


def solution_record(sol: Solution) -> dict:
    return {
        "status": sol.status.value,
        "cost": float(sol.cost),
        "sigma": [int(s) for s in sol.sigma],
        "event_set": [int(t) for t in sol.event_set],
        "qp_count": int(sol.stats.qp_count),
        "iterations": int(sol.stats.iterations),
        "wall_time": float(sol.stats.wall_time),
    }
