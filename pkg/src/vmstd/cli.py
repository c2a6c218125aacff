"""Batch front end: config files in, CSV tables and field dumps out.

Config format is flat dotted key-value text, one assignment per line,
with ``#`` comments::

    problem.dim = 2
    problem.nu = 0.05
    problem.sigma = 0.05
    problem.ramp = 10.0
    problem.center = 0.3 0.3
    problem.speed = 0.4 0.4
    hierarchy.cells = 64 64
    hierarchy.sides = 1.0 0.125
    solver.modes = 2 2
    solver.steps = 128

Multi-valued keys are space separated, one entry per hierarchy level
(or per axis for problem.center / problem.speed).  Optional keys and
their defaults are listed in ``_OPTIONAL``.

CSV schema (version header ``# vmstd-csv v1``), columns in order:
  run_id, status, axis, value       identification; axis/value are blank
                                    for single runs, one point per row
                                    in sweeps, failed points flagged
  dim, levels, cells, sides, modes  hierarchy summary ('x'-joined)
  steps, slab, accelerated          time-marching parameters
  e_vms_td, e_ref                   relative space-time errors (e_ref
                                    only when output.reference = true)
  per_step_ms, dof, n_ref           mean stepping cost after warmup,
                                    separated unknown count, and the
                                    uniform mesh matching the finest h
  note                              failure or non-convergence detail
Timing columns vary between runs; every other field is deterministic
for a fixed config.  Sweeps append fitted log-log slopes as trailing
comment lines.

Verbs: run, sweep, compare, dump.  Exit codes: 0 success, 2 config
error, 3 solver non-convergence (only under --strict).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import separated as sp, verify
from .errors import ConfigInvalid, MissingExactSolution, VmstdError
from .grid import build_hierarchy
from .problems import MovingGaussianProblem
from .td_solver import SolveCriteria
from .vms import MarchConfig, march, slab_march

CSV_VERSION = "# vmstd-csv v1"
CSV_COLUMNS = (
    "run_id", "status", "axis", "value", "dim", "levels", "cells", "sides",
    "modes", "steps", "slab", "accelerated", "e_vms_td", "e_ref",
    "per_step_ms", "dof", "n_ref", "note")
SWEEP_AXES = ("Nt", "zeta", "L2", "m", "hierarchy")
_WARMUP_STEPS = 2


@dataclass(frozen=True)
class RunConfig:
    """One validated run request: problem, hierarchy, solver, output."""

    dim: int
    nu: float
    sigma: float
    ramp: float
    center: tuple
    speed: tuple
    side: float
    final_time: float
    cells: tuple
    sides: tuple
    modes: tuple
    steps: int
    theta_max: int
    rho_max: int
    td_tol: float
    scale_tol: float
    slab: int
    accelerated: bool
    compression_tol: float
    csv_name: str
    dump_every: int
    dump_prefix: str
    slice_axis: int
    slice_value: float
    reference: bool


# key -> (tuple path into RunConfig, element parser, arity)
# arity: "one" scalar, "many" one value per level or axis
_REQUIRED = {
    "problem.dim": ("dim", int, "one"),
    "problem.nu": ("nu", float, "one"),
    "problem.sigma": ("sigma", float, "one"),
    "problem.ramp": ("ramp", float, "one"),
    "problem.center": ("center", float, "many"),
    "problem.speed": ("speed", float, "many"),
    "hierarchy.cells": ("cells", int, "many"),
    "hierarchy.sides": ("sides", float, "many"),
    "solver.modes": ("modes", int, "many"),
    "solver.steps": ("steps", int, "one"),
}

_OPTIONAL = {
    "problem.side": ("side", float, "one", 1.0),
    "problem.final_time": ("final_time", float, "one", 1.0),
    "solver.theta_max": ("theta_max", int, "one", 30),
    "solver.rho_max": ("rho_max", int, "one", 50),
    "solver.td_tol": ("td_tol", float, "one", 1e-2),
    "solver.scale_tol": ("scale_tol", float, "one", 1e-3),
    "solver.slab": ("slab", int, "one", 1),
    "solver.accelerated": ("accelerated", bool, "one", True),
    "solver.compression_tol": ("compression_tol", float, "one", 1e-10),
    "output.csv": ("csv_name", str, "one", "report.csv"),
    "output.dump_every": ("dump_every", int, "one", 0),
    "output.dump_prefix": ("dump_prefix", str, "one", "field"),
    "output.slice_axis": ("slice_axis", int, "one", 2),
    "output.slice_value": ("slice_value", float, "one", 0.5),
    "output.reference": ("reference", bool, "one", False),
}

_FIELD_TO_KEY = {spec[0]: key
                 for key, spec in {**_REQUIRED, **_OPTIONAL}.items()}


def _parse_scalar(key: str, raw: str, kind):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigInvalid(f"{key}: expected true/false, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigInvalid(
            f"{key}: expected {kind.__name__}, got {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse dotted key-value text into a RunConfig.

    Unknown keys, repeated keys, and missing required keys all raise
    ConfigInvalid naming the offending key; values are checked later by
    build_setup, which owns the numeric preconditions.
    """
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _REQUIRED and key not in _OPTIONAL:
            raise ConfigInvalid(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigInvalid(f"line {lineno}: duplicate key {key!r}")
        seen[key] = raw

    missing = [key for key in _REQUIRED if key not in seen]
    if missing:
        raise ConfigInvalid("missing required keys: " + ", ".join(missing))

    values = {}
    for key, raw in seen.items():
        field, kind, arity = (_REQUIRED.get(key) or _OPTIONAL[key])[:3]
        if arity == "many":
            values[field] = tuple(_parse_scalar(key, part, kind)
                                  for part in raw.split())
        else:
            values[field] = _parse_scalar(key, raw, kind)
    for key, (field, _, _, default) in _OPTIONAL.items():
        values.setdefault(field, default)
    return RunConfig(**values)


def read_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(_format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) == cfg."""
    lines = []
    for key in list(_REQUIRED) + list(_OPTIONAL):
        field = (_REQUIRED.get(key) or _OPTIONAL[key])[0]
        lines.append(f"{key} = {_format_value(getattr(cfg, field))}")
    return "\n".join(lines) + "\n"


def build_setup(cfg: RunConfig):
    """Turn a parsed config into (problem, grids, MarchConfig).

    Every precondition failure is reported as ConfigInvalid naming the
    config keys that caused it, so batch callers can show actionable
    diagnostics without a traceback.
    """
    complaints = []
    if cfg.dim not in (2, 3):
        complaints.append("problem.dim must be 2 or 3")
    if len(cfg.center) != cfg.dim or len(cfg.speed) != cfg.dim:
        complaints.append(
            "problem.center and problem.speed need one value per axis")
    levels = len(cfg.cells)
    if len(cfg.sides) != levels or len(cfg.modes) != levels:
        complaints.append(
            "hierarchy.cells, hierarchy.sides, solver.modes must have one "
            "value per level")
    if levels and cfg.sides and abs(cfg.sides[0] - cfg.side) > 1e-12:
        complaints.append("hierarchy.sides[0] must equal problem.side")
    if cfg.steps < 1:
        complaints.append("solver.steps must be at least 1")
    if cfg.slab < 1:
        complaints.append("solver.slab must be at least 1")
    elif cfg.slab > 1:
        if levels != 2:
            complaints.append("solver.slab > 1 requires a two-level hierarchy")
        if cfg.steps % cfg.slab:
            complaints.append("solver.slab must divide solver.steps")
    if any(q < 1 for q in cfg.modes):
        complaints.append("solver.modes entries must be at least 1")
    if cfg.compression_tol <= 0.0:
        complaints.append("solver.compression_tol must be positive")
    if complaints:
        raise ConfigInvalid("; ".join(complaints))

    try:
        problem = MovingGaussianProblem(
            dim=cfg.dim, diffusivity=cfg.nu, width=cfg.sigma,
            ramp_rate=cfg.ramp, centers=cfg.center, speeds=cfg.speed,
            side_length=cfg.side, final_time=cfg.final_time)
    except VmstdError as exc:
        raise ConfigInvalid(f"problem block: {exc}") from None
    try:
        grids = build_hierarchy(list(zip(cfg.cells, cfg.sides)), cfg.dim)
    except VmstdError as exc:
        raise ConfigInvalid(
            f"hierarchy.cells / hierarchy.sides: {exc}") from None
    criteria = SolveCriteria(td_tol=cfg.td_tol, scale_tol=cfg.scale_tol,
                             rho_max=cfg.rho_max, theta_max=cfg.theta_max)
    march_config = MarchConfig(
        q_modes=cfg.modes, n_steps=cfg.steps, criteria=criteria,
        accelerated=cfg.accelerated, compression_tol=cfg.compression_tol)
    return problem, grids, march_config


@dataclass(frozen=True)
class RunResult:
    """Everything one executed point contributes to a CSV row."""

    trajectory: tuple
    report: object
    e_vms_td: float | None
    e_ref: float | None
    per_step_ms: float
    dof: int
    n_ref: int
    notes: tuple


def execute(cfg: RunConfig, on_step=None) -> RunResult:
    """Run one config end to end and measure it.

    Timing covers stepping only; the error integrals run afterwards on
    the recorded trajectory.
    """
    problem, grids, march_config = build_setup(cfg)
    trajectory = []

    def collect(state, diag):
        trajectory.append(state)
        if on_step is not None:
            on_step(state, diag)

    if cfg.slab > 1:
        report = slab_march(problem, grids, march_config, cfg.slab,
                            on_step=collect)
    else:
        report = march(problem, grids, march_config, on_step=collect)

    notes = []
    if any(not d.solver_converged or not d.inter_converged
           for d in report.steps):
        notes.append("non-convergence in %d of %d steps" % (
            sum(1 for d in report.steps
                if not d.solver_converged or not d.inter_converged),
            len(report.steps)))

    e_vms = None
    try:
        e_vms = verify.error_vms_td(trajectory, problem).value
    except MissingExactSolution:
        notes.append("no exact solution; error columns empty")

    e_ref = None
    if cfg.reference:
        n_ref = verify.equivalent_reference_cells(grids)
        ref_states = verify.td_reference(
            problem, n_ref, cfg.steps, max(cfg.modes),
            criteria=march_config.criteria)
        e_ref = verify.error_ref(ref_states, problem).value

    seconds = [d.seconds for d in report.steps]
    measured = seconds[_WARMUP_STEPS:] if len(seconds) > _WARMUP_STEPS \
        else seconds
    return RunResult(
        trajectory=tuple(trajectory), report=report, e_vms_td=e_vms,
        e_ref=e_ref, per_step_ms=1e3 * float(np.mean(measured)),
        dof=verify.dof_count(grids, cfg.modes),
        n_ref=verify.equivalent_reference_cells(grids), notes=tuple(notes))


def _fmt_float(value) -> str:
    return "" if value is None else "%.6e" % value


def _row(run_id: str, cfg: RunConfig, result=None, axis="", value="",
         error=None) -> dict:
    row = {
        "run_id": run_id,
        "status": "ok" if error is None else "failed",
        "axis": axis,
        "value": value,
        "dim": cfg.dim,
        "levels": len(cfg.cells),
        "cells": "x".join(str(c) for c in cfg.cells),
        "sides": "x".join("%g" % s for s in cfg.sides),
        "modes": "x".join(str(q) for q in cfg.modes),
        "steps": cfg.steps,
        "slab": cfg.slab,
        "accelerated": "true" if cfg.accelerated else "false",
        "e_vms_td": "",
        "e_ref": "",
        "per_step_ms": "",
        "dof": "",
        "n_ref": "",
        "note": "" if error is None else str(error),
    }
    if result is not None:
        row.update(
            e_vms_td=_fmt_float(result.e_vms_td),
            e_ref=_fmt_float(result.e_ref),
            per_step_ms="%.3f" % result.per_step_ms,
            dof=result.dof,
            n_ref=result.n_ref,
            note="; ".join(result.notes))
    return row


def write_csv(path, rows, comments=()) -> None:
    """Versioned CSV: header comment, column row, data, trailing comments."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_VERSION + "\n")
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        for line in comments:
            fh.write("# " + line + "\n")


def read_csv(path):
    """Load (rows, comments) back from write_csv output."""
    rows, comments = [], []
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != CSV_VERSION:
            raise ConfigInvalid(f"{path}: not a {CSV_VERSION!r} file")
        data = []
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                data.append(line)
        rows = list(csv.DictReader(io.StringIO("".join(data))))
    return rows, comments


# ---------------------------------------------------------------------------
# sweep axes

def _require_int(axis: str, value) -> int:
    if abs(value - round(value)) > 1e-9:
        raise ConfigInvalid(f"axis {axis}: value {value} must be an integer")
    return int(round(value))


def _point_config(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    """Derive one sweep point's config; raises ConfigInvalid if the value
    cannot be realised on the base hierarchy (windows snap to the parent
    lattice, coarsening ratios must stay whole)."""
    if axis == "Nt":
        return replace(cfg, steps=_require_int(axis, value))

    if axis == "zeta":
        zeta = _require_int(axis, value)
        if zeta < 1:
            raise ConfigInvalid("axis zeta: ratio must be at least 1")
        levels = len(cfg.cells)
        h = cfg.sides[-1] / cfg.cells[-1]
        cells = list(cfg.cells)
        for lev in range(levels - 2, -1, -1):
            h *= zeta
            exact = cfg.sides[lev] / h
            if abs(exact - round(exact)) > 1e-9 or round(exact) < 1:
                raise ConfigInvalid(
                    f"axis zeta: hierarchy.sides[{lev}] = {cfg.sides[lev]} "
                    f"is not a whole number of cells at ratio {zeta}")
            cells[lev] = int(round(exact))
        return replace(cfg, cells=tuple(cells))

    if axis == "L2":
        if len(cfg.cells) != 2:
            raise ConfigInvalid("axis L2 needs a two-level hierarchy")
        h1 = cfg.sides[0] / cfg.cells[0]
        h2 = cfg.sides[1] / cfg.cells[1]
        parent_cells = int(round(value / h1))
        if parent_cells < 1:
            raise ConfigInvalid(
                f"axis L2: window {value} is below one parent cell {h1}")
        side = parent_cells * h1
        if side > cfg.sides[0] + 1e-12:
            raise ConfigInvalid(
                f"axis L2: window {value} exceeds the domain side")
        return replace(cfg, sides=(cfg.sides[0], side),
                       cells=(cfg.cells[0], int(round(side / h2))))

    if axis == "m":
        return replace(cfg, slab=_require_int(axis, value))

    if axis == "hierarchy":
        if len(cfg.cells) != 3:
            raise ConfigInvalid("axis hierarchy needs a three-level hierarchy")
        n = _require_int(axis, value)
        if n < 10 or n % 10:
            raise ConfigInvalid(
                "axis hierarchy: cells per side must be a positive multiple "
                "of 10 (windows are 10 parent cells wide)")
        side = cfg.sides[0]
        return replace(cfg, cells=(n, n, n),
                       sides=(side, 10.0 * side / n, 100.0 * side / n ** 2))

    raise ConfigInvalid(f"unknown sweep axis {axis!r}; "
                        "choose from " + ", ".join(SWEEP_AXES))


def _sweep_worker(payload):
    """One sweep point, isolated for process pools; never raises."""
    index, run_id, text, axis, value = payload
    cfg = parse_config(text)
    label = "%g" % value
    try:
        point = _point_config(cfg, axis, value)
        result = execute(point)
        return index, _row(run_id, point, result, axis=axis, value=label)
    except VmstdError as exc:
        return index, _row(run_id, cfg, axis=axis, value=label, error=exc)


def _slope_comments(rows, axis: str, final_time: float, window) -> list:
    """Fitted log-log slopes over the ok rows inside the index window."""
    lo, hi = window if window else (0, len(rows))
    picked = [(i, row) for i, row in enumerate(rows)
              if lo <= i < hi and row["status"] == "ok"]
    comments = []
    for metric in ("e_vms_td", "e_ref"):
        pts = [(float(row["value"]), float(row[metric]))
               for _, row in picked if row[metric]]
        xs = [final_time / v if axis == "Nt" else v for v, _ in pts]
        ys = [e for _, e in pts]
        if len(xs) < 2 or min(ys) <= 0.0:
            continue
        slope = verify.fit_loglog_slope(xs, ys)
        label = "dt" if axis == "Nt" else axis
        comments.append("slope %s = %.4f (x = %s, points [%d:%d))"
                        % (metric, slope, label, lo, hi))
    return comments


def run_sweep(cfg: RunConfig, run_id: str, axis: str, values, jobs: int = 1,
              fit_window=None):
    """Run every point (concurrently up to jobs) and fit slopes.

    Per-point failures become flagged rows; only a bad axis name or an
    empty value list is a config error.
    """
    if axis not in SWEEP_AXES:
        raise ConfigInvalid(f"unknown sweep axis {axis!r}; "
                            "choose from " + ", ".join(SWEEP_AXES))
    if not values:
        raise ConfigInvalid("sweep needs at least one axis value")
    text = serialize_config(cfg)
    payloads = [(i, f"{run_id}[{axis}={'%g' % v}]", text, axis, float(v))
                for i, v in enumerate(values)]
    rows = [None] * len(payloads)
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            for index, row in pool.map(_sweep_worker, payloads):
                rows[index] = row
    else:
        for payload in payloads:
            index, row = _sweep_worker(payload)
            rows[index] = row
    comments = _slope_comments(rows, axis, cfg.final_time, fit_window)
    return rows, comments


# ---------------------------------------------------------------------------
# field dumps

def dump_field(state, path_prefix, slice_axis: int = 2,
               slice_value: float = 0.5) -> list:
    """Write every level of a state as separated text plus a legacy
    structured-points scalar file; returns the paths written.

    3D fields are reconstructed on the grid plane nearest slice_value
    along slice_axis; 2D fields are written whole.
    """
    written = []
    for field, grid in zip(state.fields, state.grids):
        stem = f"{path_prefix}_l{grid.level}"
        sep_path = Path(stem + ".sep.txt")
        sp.save_field(field, sep_path)
        written.append(sep_path)

        values = sp.reconstruct(field)
        origin = list(grid.origin)
        if grid.dim == 3:
            axis = slice_axis
            if not 0 <= axis < 3:
                raise ConfigInvalid("output.slice_axis must be 0, 1, or 2")
            k = int(round((slice_value - grid.origin[axis]) / grid.mesh_size))
            k = min(max(k, 0), grid.nodes_per_dim - 1)
            values = np.expand_dims(np.take(values, k, axis=axis), axis)
            origin[axis] = grid.node_coord(axis, k)
        dims = values.shape + (1,) * (3 - values.ndim)
        vtk_path = Path(stem + ".vtk")
        with open(vtk_path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"vmstd level {grid.level} at step {state.time_index}\n")
            fh.write("ASCII\n")
            fh.write("DATASET STRUCTURED_POINTS\n")
            fh.write("DIMENSIONS %d %d %d\n" % dims)
            fh.write("ORIGIN %.9g %.9g %.9g\n"
                     % tuple(origin + [0.0] * (3 - len(origin))))
            fh.write("SPACING %.9g %.9g %.9g\n" % ((grid.mesh_size,) * 3))
            fh.write("POINT_DATA %d\n" % values.size)
            fh.write("SCALARS u double 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for v in values.flatten(order="F"):
                fh.write("%.17g\n" % v)
        written.append(vtk_path)
    return written


# ---------------------------------------------------------------------------
# verbs

def _print(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _error_record(kind: str, detail: str) -> None:
    print(json.dumps({"error": kind, "detail": detail}), file=sys.stderr)


def _cmd_run(args) -> int:
    cfg = read_config(args.config)
    run_id = Path(args.config).stem
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dumps = []
    on_step = None
    if cfg.dump_every > 0:
        def on_step(state, diag):
            if state.time_index % cfg.dump_every == 0 \
                    or state.time_index == cfg.steps:
                dumps.extend(dump_field(
                    state, out_dir / f"{cfg.dump_prefix}_step{state.time_index:05d}",
                    cfg.slice_axis, cfg.slice_value))

    result = execute(cfg, on_step=on_step)
    csv_path = out_dir / cfg.csv_name
    write_csv(csv_path, [_row(run_id, cfg, result)])
    _print(args.quiet, f"wrote {csv_path}")
    for path in dumps:
        _print(args.quiet, f"wrote {path}")
    stalled = [n for n in result.notes if "non-convergence" in n]
    if args.strict and stalled:
        _error_record("non-convergence", stalled[0])
        return 3
    return 0


def _parse_values(raw: str):
    values = [float(part) for part in raw.replace(",", " ").split()]
    return values


def _cmd_sweep(args) -> int:
    cfg = read_config(args.config)
    run_id = Path(args.config).stem
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    window = tuple(args.fit_window) if args.fit_window else None
    rows, comments = run_sweep(cfg, run_id, args.axis,
                               _parse_values(args.values),
                               jobs=args.jobs, fit_window=window)
    csv_path = out_dir / cfg.csv_name
    write_csv(csv_path, rows, comments)
    _print(args.quiet, f"wrote {csv_path} ({len(rows)} points)")
    for line in comments:
        _print(args.quiet, line)
    if args.strict and any("non-convergence" in row["note"] for row in rows):
        _error_record("non-convergence", "one or more points stalled")
        return 3
    return 0


def _cmd_compare(args) -> int:
    cfg = read_config(args.config)
    problem, grids, march_config = build_setup(cfg)
    result = execute(cfg)
    lines = [
        "vms-td:    e = %s, per-step %.3f ms, dof %d"
        % (_fmt_float(result.e_vms_td) or "n/a", result.per_step_ms,
           result.dof)]

    n_ref = verify.equivalent_reference_cells(grids)
    q_ref = max(cfg.modes)
    ref_seconds = []
    ref_states = verify.td_reference(
        problem, n_ref, cfg.steps, q_ref, criteria=march_config.criteria,
        on_step=lambda s, d: ref_seconds.append(d.seconds))
    e_ref = verify.error_ref(ref_states, problem).value
    measured = ref_seconds[_WARMUP_STEPS:] \
        if len(ref_seconds) > _WARMUP_STEPS else ref_seconds
    lines.append("reference: e = %s, per-step %.3f ms (N = %d, q = %d)"
                 % (_fmt_float(e_ref), 1e3 * float(np.mean(measured)),
                    n_ref, q_ref))

    limit = verify._DENSE_LIMIT.get(cfg.dim, 0)
    if n_ref <= limit:
        dense = verify.dense_cn_oracle(problem, n_ref, cfg.steps)
        gap = max(float(np.max(np.abs(sp.reconstruct(state.fields[0]) - u)))
                  for state, u in zip(ref_states, dense))
        lines.append("oracle:    max |reference - oracle| = %.6e (N = %d)"
                     % (gap, n_ref))
    else:
        lines.append("oracle:    skipped (N = %d exceeds dense limit %d)"
                     % (n_ref, limit))
    for line in lines:
        _print(args.quiet, line)
    return 0


def _cmd_dump(args) -> int:
    cfg = read_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def on_step(state, diag):
        if cfg.dump_every > 0 and state.time_index % cfg.dump_every == 0 \
                and state.time_index != cfg.steps:
            written.extend(dump_field(
                state, out_dir / f"{cfg.dump_prefix}_step{state.time_index:05d}",
                cfg.slice_axis, cfg.slice_value))

    result = execute(cfg, on_step=on_step)
    final = result.trajectory[-1]
    written.extend(dump_field(
        final, out_dir / f"{cfg.dump_prefix}_step{final.time_index:05d}",
        cfg.slice_axis, cfg.slice_value))
    for path in written:
        _print(args.quiet, f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vmstd",
        description="batch runner for the separated multi-level solver")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="concurrent sweep points")
        p.add_argument("--seed", type=int, default=None,
                       help="reserved; the algorithm is deterministic")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--strict", action="store_true",
                       help="treat solver non-convergence as failure")

    p_run = sub.add_parser("run", help="one config, one CSV row")
    common(p_run)
    p_sweep = sub.add_parser("sweep", help="vary one axis, fit slopes")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True,
                         help="space or comma separated axis values")
    p_sweep.add_argument("--fit-window", type=int, nargs=2, default=None,
                         metavar=("FIRST", "PAST"),
                         help="point index window for slope fits")
    p_compare = sub.add_parser(
        "compare", help="solver vs uniform reference vs dense oracle")
    common(p_compare)
    p_dump = sub.add_parser("dump", help="write field files for one run")
    common(p_dump)

    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep,
               "compare": _cmd_compare, "dump": _cmd_dump}[args.verb]
    try:
        return handler(args)
    except ConfigInvalid as exc:
        _error_record("config", str(exc))
        return 2
    except VmstdError as exc:
        _error_record("solver", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
