"""Error measurement against exact solutions, dense reference solvers,
and per-step timing.

Error integrals exploit that both the numerical fields and the exact
solution are separable: every squared-error integral over an axis-aligned
box reduces to per-axis Gauss sums combined through small Gram matrices.
The region outside a refinement window is tiled into axis-aligned
rectangles, so no quadrature ever crosses a window boundary.

The dense Crank-Nicolson oracle deliberately shares no code with the
separated stack: 1D matrices are assembled from closed-form element
integrals, the tensor system is built by Kronecker products, and each
step is a direct dense solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import problems as _problems
from . import separated as sp
from .errors import (
    ConfigInvalid,
    MisalignedInterval,
    MissingExactSolution,
    ShapeMismatch,
    SizeGuard,
)
from .grid import LevelGrid, build_hierarchy
from .separated import SeparatedField
from .vms import LevelState, MarchConfig, march

_DENSE_LIMIT = {2: 32, 3: 16}


@dataclass(frozen=True)
class ErrorReport:
    """Relative space-time error of a trajectory against the exact solution.

    ``per_step`` holds the absolute L2 error of each step and
    ``exact_norms`` the matching exact-solution norms; ``value`` is the
    ratio of their step averages. When the exact solution vanishes
    identically the ratio is undefined and ``value`` falls back to the
    absolute numerator, flagged by ``absolute``.
    """

    value: float
    per_step: tuple
    exact_norms: tuple
    quadrature_points: int
    absolute: bool
    kind: str


@dataclass(frozen=True)
class TimingReport:
    """Mean wall-clock seconds per time step after a warmup prefix."""

    per_step_seconds: float
    steps_measured: int
    warmup_steps: int
    dof_count: int
    reference_cells: int


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2 or xs.size != ys.size:
        raise ConfigInvalid("slope fit needs at least two (x, y) pairs")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ConfigInvalid("slope fit needs positive values on both axes")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _grid_box(g: LevelGrid):
    return tuple((g.origin[k], g.origin[k] + g.side_length) for k in range(g.dim))


def _axis_quadrature(g: LevelGrid, axis: int, lo: float, hi: float, order: int):
    """Gauss points and weights on the grid's whole cells covering [lo, hi]."""
    h = g.mesh_size
    a = (lo - g.origin[axis]) / h
    b = (hi - g.origin[axis]) / h
    if abs(a - round(a)) > 1e-9 or abs(b - round(b)) > 1e-9:
        raise MisalignedInterval(
            f"[{lo}, {hi}] does not align with the level-{g.level} axis {axis} mesh")
    first, last = int(round(a)), int(round(b))
    xi, wi = np.polynomial.legendre.leggauss(order)
    centers = g.origin[axis] + h * (np.arange(first, last) + 0.5)
    pts = (centers[:, None] + 0.5 * h * xi[None, :]).ravel()
    wts = np.tile(0.5 * h * wi, last - first)
    return pts, wts


def _factor_values(field: SeparatedField, axis: int, g: LevelGrid, pts: np.ndarray):
    rows = field.factors[axis]
    if rows.shape[1] != g.nodes_per_dim:
        raise ShapeMismatch(
            f"axis {axis} has {rows.shape[1]} nodes, grid expects {g.nodes_per_dim}")
    t = (pts - g.origin[axis]) / g.mesh_size
    idx = np.clip(np.floor(t + 1e-9).astype(int), 0, g.cells_per_dim - 1)
    loc = t - idx
    return rows[:, idx] * (1.0 - loc) + rows[:, idx + 1] * loc


def square_error_on_box(field: SeparatedField, g: LevelGrid, term, box,
                        order: int) -> float:
    """Integral of (field - exact term)^2 over an aligned box of g's cells."""
    grams = []
    crosses = []
    exact = 1.0
    for k in range(g.dim):
        pts, wts = _axis_quadrature(g, k, float(box[k][0]), float(box[k][1]), order)
        vals = _factor_values(field, k, g, pts)
        gk = np.asarray(term.axis_functions[k](pts), dtype=float)
        gk = np.broadcast_to(gk, pts.shape)
        weighted = vals * wts[None, :]
        grams.append(weighted @ vals.T)
        crosses.append(weighted @ gk)
        exact *= float(wts @ gk**2)
    w = float(term.weight)
    total = w * w * exact
    if field.modes:
        gram = grams[0]
        cross = crosses[0]
        for k in range(1, g.dim):
            gram = gram * grams[k]
            cross = cross * crosses[k]
        total += float(gram.sum()) - 2.0 * w * float(cross.sum())
    return max(total, 0.0)


def _box_difference(outer, inner):
    """Axis-aligned rectangles covering outer minus inner (inner nested)."""
    dim = len(outer)
    tiles = []
    done = []
    for k in range(dim):
        olo, ohi = outer[k]
        ilo = max(inner[k][0], olo)
        ihi = min(inner[k][1], ohi)
        for lo, hi in ((olo, ilo), (ihi, ohi)):
            if hi - lo > 1e-12:
                tiles.append(tuple(done) + ((lo, hi),) + tuple(outer[k + 1:]))
        done.append((ilo, ihi))
    return tiles


def _exact_term(problem, t: float):
    hook = getattr(problem, "exact_term", None)
    if callable(hook):
        return hook(t)
    if hasattr(problem, "width") and hasattr(problem, "center_at"):
        return _problems.exact_expansion(problem, t)
    raise MissingExactSolution(
        f"{type(problem).__name__} does not define an exact solution")


def _checked(trajectory):
    states = list(trajectory)
    if not states:
        raise ConfigInvalid("trajectory is empty")
    for i, state in enumerate(states):
        if state.time_index != i + 1:
            raise ConfigInvalid(
                "trajectory must hold every step from 1 in order; "
                f"position {i} has time index {state.time_index}")
    return states


def _error_report(states, problem, order: int, kind: str) -> ErrorReport:
    dt = problem.final_time / len(states)
    side = problem.side_length
    finest = states[0].grids[-1]
    n_sub = max(int(round(side / finest.mesh_size)), 1)
    probe = LevelGrid(level=1, dim=problem.dim, cells_per_dim=n_sub,
                      mesh_size=side / n_sub, side_length=side,
                      origin=(0.0,) * problem.dim)
    per_step = []
    norms = []
    for state in states:
        term = _exact_term(problem, state.time_index * dt)
        boxes = [_grid_box(g) for g in state.grids]
        total = square_error_on_box(
            state.fields[-1], state.grids[-1], term, boxes[-1], order)
        for lvl in range(len(boxes) - 1):
            for tile in _box_difference(boxes[lvl], boxes[lvl + 1]):
                total += square_error_on_box(
                    state.fields[lvl], state.grids[lvl], term, tile, order)
        per_step.append(float(np.sqrt(total)))
        norm2 = float(term.weight) ** 2
        for k in range(problem.dim):
            pts, wts = _axis_quadrature(probe, k, 0.0, side, order)
            gk = np.broadcast_to(
                np.asarray(term.axis_functions[k](pts), dtype=float), pts.shape)
            norm2 *= float(wts @ gk**2)
        norms.append(float(np.sqrt(max(norm2, 0.0))))
    numerator = float(np.mean(per_step))
    denominator = float(np.mean(norms))
    if denominator == 0.0:
        return ErrorReport(numerator, tuple(per_step), tuple(norms), order, True, kind)
    return ErrorReport(numerator / denominator, tuple(per_step), tuple(norms),
                       order, False, kind)


def error_vms_td(trajectory, problem, quadrature_points: int = 3) -> ErrorReport:
    """Relative error of a multi-level trajectory.

    Each level's field is integrated over its own window minus the next
    window; the innermost field covers its whole window.
    """
    return _error_report(_checked(trajectory), problem, quadrature_points, "vms-td")


def error_ref(trajectory, problem, quadrature_points: int = 3) -> ErrorReport:
    """Relative error of a single-level trajectory over the whole domain."""
    states = _checked(trajectory)
    for state in states:
        if len(state.fields) != 1:
            raise ConfigInvalid("reference error expects single-level states")
    return _error_report(states, problem, quadrature_points, "reference")


def _source_callable(problem):
    raw = getattr(problem, "raw_source", None)
    if callable(raw):
        return lambda *args: np.asarray(raw(*args), dtype=float)
    if hasattr(problem, "width") and hasattr(problem, "center_at"):
        return lambda *args: np.asarray(
            _problems.source_value(problem, args[:-1], args[-1]), dtype=float)
    terms_hook = getattr(problem, "source_terms", None)
    if callable(terms_hook):
        def from_terms(*args):
            shape = np.broadcast_shapes(*[np.shape(a) for a in args[:-1]])
            total = np.zeros(shape)
            for term in terms_hook(args[-1]):
                piece = term.weight
                for fn, xk in zip(term.axis_functions, args[:-1]):
                    piece = piece * fn(np.asarray(xk, dtype=float))
                total = total + piece
            return total
        return from_terms
    raise ConfigInvalid(f"{type(problem).__name__} provides no heat source")


def _initial_nodal(problem, axes):
    hook = getattr(problem, "initial_term", None)
    term = hook() if callable(hook) else None
    if term is None:
        try:
            term = _exact_term(problem, 0.0)
        except MissingExactSolution:
            term = None
    shape = tuple(len(a) for a in axes)
    if term is None:
        return np.zeros(shape)
    out = np.full(shape, float(term.weight))
    for k, (fn, a) in enumerate(zip(term.axis_functions, axes)):
        view = [1] * len(axes)
        view[k] = -1
        out = out * np.asarray(fn(a), dtype=float).reshape(view)
    return out


def _hat_matrix(n_cells: int, h: float, pts: np.ndarray) -> np.ndarray:
    t = pts / h
    idx = np.clip(np.floor(t + 1e-9).astype(int), 0, n_cells - 1)
    loc = t - idx
    out = np.zeros((n_cells + 1, pts.size))
    cols = np.arange(pts.size)
    out[idx, cols] = 1.0 - loc
    out[idx + 1, cols] = loc
    return out


def dense_cn_oracle(problem, n_cells: int, n_steps: int, initial=None):
    """Brute-force Crank-Nicolson trajectory on the full tensor grid.

    Returns the nodal array of every step. Independent of the separated
    stack by construction; guarded to desk-scale sizes.
    """
    d = problem.dim
    if d not in _DENSE_LIMIT:
        raise ConfigInvalid(f"dense oracle supports d in (2, 3), not {d}")
    if n_cells > _DENSE_LIMIT[d]:
        raise SizeGuard(
            f"dense oracle allows at most {_DENSE_LIMIT[d]} cells for d = {d}")
    if n_steps < 1:
        raise ConfigInvalid("need at least one time step")
    side = float(problem.side_length)
    nu = float(problem.diffusivity)
    h = side / n_cells
    dt = float(problem.final_time) / n_steps

    n = n_cells + 1
    mass = np.diag(np.full(n, 2.0 * h / 3.0)) \
        + np.diag(np.full(n - 1, h / 6.0), 1) + np.diag(np.full(n - 1, h / 6.0), -1)
    mass[0, 0] = mass[-1, -1] = h / 3.0
    stiff = np.diag(np.full(n, 2.0 / h)) \
        + np.diag(np.full(n - 1, -1.0 / h), 1) + np.diag(np.full(n - 1, -1.0 / h), -1)
    stiff[0, 0] = stiff[-1, -1] = 1.0 / h

    if d == 2:
        big_mass = np.kron(mass, mass)
        big_stiff = np.kron(stiff, mass) + np.kron(mass, stiff)
    else:
        mm = np.kron(mass, mass)
        big_mass = np.kron(mass, mm)
        big_stiff = (np.kron(stiff, mm) + np.kron(mass, np.kron(stiff, mass))
                     + np.kron(mass, np.kron(mass, stiff)))
        del mm

    grid_idx = np.arange(n**d).reshape((n,) * d)
    interior = grid_idx[(slice(1, -1),) * d].ravel()
    a_int = big_mass[np.ix_(interior, interior)] / dt \
        + 0.5 * nu * big_stiff[np.ix_(interior, interior)]
    ahat_int = big_mass[np.ix_(interior, interior)] / dt \
        - 0.5 * nu * big_stiff[np.ix_(interior, interior)]
    del big_mass, big_stiff
    lu = lu_factor(a_int)

    axes = [np.linspace(0.0, side, n) for _ in range(d)]
    source = _source_callable(problem)
    gauss_x = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    centers = h * (np.arange(n_cells) + 0.5)
    pts = (centers[:, None] + 0.5 * h * gauss_x[None, :]).ravel()
    wts = np.full(pts.size, 0.5 * h)
    hat = _hat_matrix(n_cells, h, pts)

    u = _initial_nodal(problem, axes) if initial is None \
        else np.array(initial, dtype=float)
    if u.shape != (n,) * d:
        raise ConfigInvalid(f"initial data must have shape {(n,) * d}")
    trajectory = []
    for step in range(1, n_steps + 1):
        t_mid = (step - 0.5) * dt
        if d == 2:
            samples = source(pts[:, None], pts[None, :], t_mid)
            samples = np.broadcast_to(samples, (pts.size, pts.size))
            load = hat @ (samples * np.outer(wts, wts)) @ hat.T
        else:
            samples = source(pts[:, None, None], pts[None, :, None],
                             pts[None, None, :], t_mid)
            samples = np.broadcast_to(samples, (pts.size,) * 3)
            weighted = samples * wts[:, None, None] * wts[None, :, None] \
                * wts[None, None, :]
            load = np.einsum("ip,jq,kr,pqr->ijk", hat, hat, hat, weighted)
        rhs = ahat_int @ u.ravel()[interior] + load.ravel()[interior]
        u = np.zeros((n,) * d)
        u.ravel()[interior] = lu_solve(lu, rhs)
        trajectory.append(u.copy())
    return trajectory


def td_reference(problem, n_cells: int, n_steps: int, q_modes: int,
                 criteria=None, on_step=None):
    """Single-level separated trajectory on a uniform fine mesh over the domain."""
    grids = build_hierarchy([(n_cells, problem.side_length)], problem.dim)
    states = []

    def collect(state, diag):
        states.append(state)
        if on_step is not None:
            on_step(state, diag)

    march(problem, grids, MarchConfig((q_modes,), n_steps, criteria),
          on_step=collect)
    return states


def dof_count(grids, q_modes) -> int:
    """Unknown count of the separated hierarchy: sum of N*Q per level, times d."""
    if len(grids) != len(q_modes):
        raise ConfigInvalid("need one mode count per level")
    return sum(g.cells_per_dim * int(q) for g, q in zip(grids, q_modes)) \
        * grids[0].dim


def equivalent_reference_cells(grids) -> int:
    """Cells per axis of the uniform mesh matching the finest level's spacing."""
    return int(round(grids[0].side_length / grids[-1].mesh_size))


def timing_harness(problem, grids, config: MarchConfig,
                   warmup_steps: int = 2) -> TimingReport:
    """Mean solver seconds per step, ignoring a warmup prefix.

    Only stepping work is timed (assembly, transfer, lifting, solves);
    error evaluation and output never run inside the marched loop.
    """
    if config.n_steps <= warmup_steps:
        raise ConfigInvalid(
            f"need more than {warmup_steps} steps to measure past the warmup")
    seconds = []
    march(problem, grids, config, on_step=lambda s, d: seconds.append(d.seconds))
    measured = seconds[warmup_steps:]
    return TimingReport(
        per_step_seconds=float(np.mean(measured)),
        steps_measured=len(measured),
        warmup_steps=warmup_steps,
        dof_count=dof_count(grids, config.q_modes),
        reference_cells=equivalent_reference_cells(grids),
    )
