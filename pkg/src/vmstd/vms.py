"""Multi-level coupling for the separated heat solver.

Levels refine a moving window around the source. Each step solves the
coarse balance on the whole domain against fine corrections on nested
windows, exchanging data by nodal injection at parent-coincident nodes
and hat interpolation at window interfaces. Drivers march the coupled
system in time, step by step or slab by slab.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import problems as _problems
from . import separated as sp
from . import td_solver as td
from .assembly import assemble_load, build_operator, build_operator_box
from .errors import ConfigInvalid, MisalignedWindow, OutOfDomain
from .grid import LevelGrid, SubdomainPlacement, locate, place_subdomain, window_cells
from .separated import SeparatedField
from .td_solver import SolveCriteria

_ALIGN_TOL = 1e-9


def placement_of(parent: LevelGrid, child: LevelGrid, time_step: int = 0) -> SubdomainPlacement:
    """Recover the placement of a located child grid on its parent."""
    corner = []
    for k in range(parent.dim):
        c = (child.origin[k] - parent.origin[k]) / parent.mesh_size
        if abs(c - round(c)) > _ALIGN_TOL:
            raise MisalignedWindow(
                f"axis {k}: window corner {child.origin[k]} is off the parent lattice")
        corner.append(int(round(c)))
    w = window_cells(parent, child)
    return SubdomainPlacement(
        level=child.level, lower_corner=tuple(corner),
        extent_cells=(w,) * parent.dim, time_step=time_step)


def _interp_axis(parent_rows: np.ndarray, parent: LevelGrid, axis: int,
                 child: LevelGrid) -> np.ndarray:
    """Parent axis factors hat-interpolated at the child's node coordinates."""
    xs = child.origin[axis] + child.mesh_size * np.arange(child.nodes_per_dim)
    t = (xs - parent.origin[axis]) / parent.mesh_size
    if t[0] < -_ALIGN_TOL or t[-1] > parent.cells_per_dim + _ALIGN_TOL:
        raise OutOfDomain(f"axis {axis}: child nodes leave the parent grid")
    idx = np.clip(np.floor(t + _ALIGN_TOL).astype(int), 0, parent.cells_per_dim - 1)
    loc = t - idx
    return parent_rows[:, idx] * (1.0 - loc) + parent_rows[:, idx + 1] * loc


def interpolate_to_child(parent_field: SeparatedField, parent: LevelGrid,
                         child: LevelGrid) -> SeparatedField:
    """Parent field sampled by hat interpolation at every child node."""
    if parent_field.modes == 0:
        return sp.zero_field((child.nodes_per_dim,) * child.dim, level=child.level)
    factors = tuple(
        _interp_axis(parent_field.factors[k], parent, k, child)
        for k in range(child.dim))
    return SeparatedField(factors, level=child.level)


def interface_lifting(parent_field: SeparatedField, parent: LevelGrid,
                      child: LevelGrid, compress_modes: bool = True,
                      tol: float = 1e-10) -> SeparatedField:
    """Window boundary data: parent interpolation on the shell, zero inside.

    One mode family per nonempty axis subset, boundary-masked on the subset
    and interior-masked off it; the families sum to interpolation minus its
    interior part, so interior nodes cancel exactly.
    """
    d = child.dim
    lengths = (child.nodes_per_dim,) * d
    if parent_field.modes == 0:
        return sp.zero_field(lengths, level=child.level)
    placement_of(parent, child)
    interp = [_interp_axis(parent_field.factors[k], parent, k, child)
              for k in range(d)]
    total = None
    for subset in range(1, 2**d):
        factors = []
        for k in range(d):
            fac = interp[k].copy()
            if subset >> k & 1:
                fac[:, 1:-1] = 0.0
            else:
                fac[:, 0] = 0.0
                fac[:, -1] = 0.0
            factors.append(fac)
        piece = SeparatedField(tuple(factors), level=child.level)
        total = piece if total is None else sp.add(total, piece)
    if compress_modes:
        total = sp.compress(total, tolerance=tol)
    return total


def average_E(child_field: SeparatedField, placement: SubdomainPlacement,
              parent: LevelGrid) -> SeparatedField:
    """Inject child nodal values at the window's parent-coincident nodes."""
    factors = []
    for k in range(parent.dim):
        fac = child_field.factors[k]
        w = placement.extent_cells[k]
        if (fac.shape[1] - 1) % w:
            raise MisalignedWindow(
                f"axis {k}: {fac.shape[1] - 1} child cells over {w} parent cells")
        zeta = (fac.shape[1] - 1) // w
        lo = placement.lower_corner[k]
        if lo < 0 or lo + w > parent.cells_per_dim:
            raise MisalignedWindow(f"axis {k}: window [{lo}, {lo + w}] leaves the parent")
        out = np.zeros((fac.shape[0], parent.nodes_per_dim))
        out[:, lo:lo + w + 1] = fac[:, ::zeta]
        factors.append(out)
    return SeparatedField(tuple(factors), level=parent.level)


def transfer_moving(prev_field: SeparatedField, prev_grid: LevelGrid,
                    new_grid: LevelGrid, parent_field: SeparatedField,
                    parent_grid: LevelGrid, tol: float = 1e-10) -> SeparatedField:
    """Re-express the previous window field on the moved window.

    The retained block is an index-shifted copy; uncovered strips take
    parent interpolation, since the fluctuation vanishes outside the old
    window. Strips are tiled one rectangle per shifted axis.
    """
    d = new_grid.dim
    n = new_grid.nodes_per_dim
    if prev_grid.nodes_per_dim != n or abs(prev_grid.mesh_size - new_grid.mesh_size) > _ALIGN_TOL:
        raise MisalignedWindow("transfer needs windows of equal size and resolution")
    shifts = []
    for k in range(d):
        s = (new_grid.origin[k] - prev_grid.origin[k]) / new_grid.mesh_size
        if abs(s - round(s)) > _ALIGN_TOL:
            raise MisalignedWindow(f"axis {k}: window moved a fractional cell count")
        shifts.append(int(round(s)))
    if all(s == 0 for s in shifts):
        return prev_field
    lo = [max(0, -s) for s in shifts]
    hi = [min(n - 1, n - 1 - s) for s in shifts]
    overlaps = all(l <= h for l, h in zip(lo, hi))

    pieces = []
    if overlaps and prev_field.modes > 0:
        shifted = []
        for k in range(d):
            fac = np.zeros_like(prev_field.factors[k])
            fac[:, lo[k]:hi[k] + 1] = \
                prev_field.factors[k][:, lo[k] + shifts[k]:hi[k] + shifts[k] + 1]
            shifted.append(fac)
        pieces.append(SeparatedField(tuple(shifted), level=prev_field.level))

    interp = interpolate_to_child(parent_field, parent_grid, new_grid)
    if interp.modes > 0:
        if not overlaps:
            pieces.append(interp)
        else:
            axis_order = (2, 1, 0) if d == 3 else (0, 1)
            done = set()
            for a in axis_order:
                if shifts[a] == 0:
                    done.add(a)
                    continue
                factors = []
                for k in range(d):
                    fac = interp.factors[k].copy()
                    if k == a:
                        fac[:, lo[k]:hi[k] + 1] = 0.0
                    elif k in done:
                        fac[:, :lo[k]] = 0.0
                        fac[:, hi[k] + 1:] = 0.0
                    factors.append(fac)
                pieces.append(SeparatedField(tuple(factors), level=prev_field.level))
                done.add(a)
    if not pieces:
        return sp.zero_field((n,) * d, level=prev_field.level)
    total = pieces[0]
    for piece in pieces[1:]:
        total = sp.add(total, piece)
    return sp.compress(total, tolerance=tol)


@dataclass(frozen=True)
class MarchConfig:
    """Per-level mode counts, step count, and iteration tolerances."""

    q_modes: tuple
    n_steps: int
    criteria: SolveCriteria | None = None
    accelerated: bool = True
    compression_tol: float = 1e-10


@dataclass(frozen=True)
class LevelState:
    """Fields and located grids per level after step time_index."""

    fields: tuple
    grids: tuple
    time_index: int


@dataclass(frozen=True)
class StepDiagnostics:
    time_index: int
    theta: int
    inter_converged: bool
    solver_rounds: tuple
    solver_converged: bool
    ridge_hits: int
    mode_counts: tuple
    seconds: float


@dataclass(frozen=True)
class RunReport:
    final_state: LevelState
    steps: tuple
    wall_seconds: float


def _source_terms(problem, t: float):
    hook = getattr(problem, "source_terms", None)
    if hook is not None:
        return hook(t)
    return _problems.separable_expansion(problem, t)


def _initial_profile(problem):
    hook = getattr(problem, "initial_term", None)
    if hook is not None:
        return hook()
    return _problems.exact_expansion(problem, 0.0)


def initial_state(problem, grids) -> LevelState:
    """Start-time nodal data per level, windows placed from the source."""
    center = problem.center_at(0.0)
    located = [grids[0]]
    for g in grids[1:]:
        pl = place_subdomain(located[-1], g, center, 0)
        located.append(locate(g, located[-1], pl))
    term = _initial_profile(problem)
    fields = []
    for g in located:
        lengths = (g.nodes_per_dim,) * g.dim
        if term is None or term.weight == 0.0:
            fields.append(sp.zero_field(lengths, level=g.level))
            continue
        rows = []
        for k in range(g.dim):
            xs = g.origin[k] + g.mesh_size * np.arange(g.nodes_per_dim)
            vals = np.asarray(term.axis_functions[k](xs), dtype=float)[None, :]
            rows.append(vals * term.weight if k == 0 else vals)
        fields.append(SeparatedField(tuple(rows), level=g.level))
    return LevelState(tuple(fields), tuple(located), 0)


def _rel_change(new: SeparatedField, old: SeparatedField) -> float:
    diff = sp.frobenius_norm(sp.add(new, sp.scale(old, -1.0)))
    norm = sp.frobenius_norm(new)
    if norm == 0.0:
        return 0.0 if diff == 0.0 else np.inf
    return diff / norm


class _Workspace:
    """Placement-independent operators cached for a whole run."""

    def __init__(self, problem, grids, config: MarchConfig):
        if len(config.q_modes) != len(grids):
            raise ConfigInvalid(
                f"{len(grids)} levels need {len(grids)} mode counts, got {len(config.q_modes)}")
        if config.n_steps < 1:
            raise ConfigInvalid("n_steps must be at least 1")
        if any(q < 1 for q in config.q_modes):
            raise ConfigInvalid("every level needs at least one mode")
        if config.compression_tol <= 0.0:
            raise ConfigInvalid("compression_tol must be positive")
        self.problem = problem
        self.tol = config.compression_tol
        self.grids = tuple(grids)
        self.config = config
        self.criteria = config.criteria or SolveCriteria()
        self.dt = problem.final_time / config.n_steps
        self.nu = problem.diffusivity
        self.a_own = tuple(build_operator(g, g, g, self.dt, self.nu, "a") for g in grids)
        self.ahat_own = tuple(build_operator(g, g, g, self.dt, self.nu, "ahat") for g in grids)


def _single_level_step(state: LevelState, problem, work: _Workspace):
    t0 = time.perf_counter()
    n = state.time_index + 1
    t_mid = (n - 0.5) * work.dt
    g1 = work.grids[0]
    load = assemble_load(_source_terms(problem, t_mid), g1, t_mid=t_mid)
    rhs = td.fold_rhs(load, [(work.ahat_own[0], sp.scale(state.fields[0], -1.0))],
                      tol=work.tol)
    res = td.solve_separated(work.a_own[0], rhs, work.config.q_modes[0],
                             criteria=work.criteria)
    diag = StepDiagnostics(n, 1, True, (res.rounds,), res.converged, res.ridge_hits,
                           (res.field.modes,), time.perf_counter() - t0)
    return LevelState((res.field,), (g1,), n), diag


def two_level_step(state: LevelState, problem, work: _Workspace):
    """One coupled step: alternate coarse and window solves to tolerance."""
    t0 = time.perf_counter()
    n = state.time_index + 1
    dt = work.dt
    t_mid = (n - 0.5) * dt
    g1, g2_tpl = work.grids
    g2_old = state.grids[1]
    ubar_prev, u_prev = state.fields

    pl_new = place_subdomain(g1, g2_tpl, problem.center_at(n * dt), n)
    g2_new = locate(g2_tpl, g1, pl_new)
    pl_old = placement_of(g1, g2_old, n - 1)
    carried = transfer_moving(u_prev, g2_old, g2_new, ubar_prev, g1, tol=work.tol)

    a12 = build_operator(g1, g2_new, g2_new, dt, work.nu, "a")
    a11w = build_operator(g1, g1, g2_new, dt, work.nu, "a")
    bhat12 = build_operator(g1, g2_old, g2_old, dt, work.nu, "ahat")
    bhat11w = build_operator(g1, g1, g2_old, dt, work.nu, "ahat")

    terms = _source_terms(problem, t_mid)
    f1 = assemble_load(terms, g1, t_mid=t_mid)
    f2 = assemble_load(terms, g2_new, t_mid=t_mid)

    base1 = td.fold_rhs(f1, [
        (work.ahat_own[0], sp.scale(ubar_prev, -1.0)),
        (bhat12, sp.scale(u_prev, -1.0)),
        (bhat11w, average_E(u_prev, pl_old, g1)),
    ], tol=work.tol)
    base2 = td.fold_rhs(f2, [(work.ahat_own[1], sp.scale(carried, -1.0))],
                       tol=work.tol)

    q1, q2 = work.config.q_modes
    crit = work.criteria
    u_cur = sp.zero_field((g2_tpl.nodes_per_dim,) * g2_tpl.dim, level=g2_tpl.level)
    ubar = ubar_prev
    prev_ubar = None
    theta_used = crit.theta_max
    inter_converged = False
    rounds = [0, 0]
    ridge = 0
    solver_ok = True
    for theta in range(1, crit.theta_max + 1):
        rhs1 = td.fold_rhs(base1, [
            (a12, u_cur),
            (a11w, sp.scale(average_E(u_cur, pl_new, g1), -1.0)),
        ], tol=work.tol)
        res1 = td.solve_separated(work.a_own[0], rhs1, q1, criteria=crit)
        ubar = res1.field
        lift = interface_lifting(ubar, g1, g2_new, tol=work.tol)
        res2 = td.solve_separated(work.a_own[1], base2, q2, criteria=crit, lifting=lift)
        u_cur = res2.field
        rounds[0] += res1.rounds
        rounds[1] += res2.rounds
        ridge += res1.ridge_hits + res2.ridge_hits
        solver_ok = solver_ok and res1.converged and res2.converged
        if prev_ubar is not None and _rel_change(ubar, prev_ubar) < crit.scale_tol:
            theta_used = theta
            inter_converged = True
            break
        prev_ubar = ubar

    new_state = LevelState((ubar, u_cur), (g1, g2_new), n)
    diag = StepDiagnostics(n, theta_used, inter_converged, tuple(rounds), solver_ok,
                           ridge, (ubar.modes, u_cur.modes), time.perf_counter() - t0)
    return new_state, diag


def three_level_step(state: LevelState, problem, work: _Workspace):
    """One step of the three-level scheme, accelerated or nested."""
    t0 = time.perf_counter()
    n = state.time_index + 1
    dt = work.dt
    t_mid = (n - 0.5) * dt
    g1, g2_tpl, g3_tpl = work.grids
    g2_old, g3_old = state.grids[1], state.grids[2]
    ubar_prev, u2_prev, u3_prev = state.fields

    center = problem.center_at(n * dt)
    pl2 = place_subdomain(g1, g2_tpl, center, n)
    g2_new = locate(g2_tpl, g1, pl2)
    pl3 = place_subdomain(g2_new, g3_tpl, center, n)
    g3_new = locate(g3_tpl, g2_new, pl3)
    pl2_old = placement_of(g1, g2_old, n - 1)
    pl3_old = placement_of(g2_old, g3_old, n - 1)

    carried2 = transfer_moving(u2_prev, g2_old, g2_new, ubar_prev, g1, tol=work.tol)
    carried3 = transfer_moving(u3_prev, g3_old, g3_new, carried2, g2_new,
                               tol=work.tol)

    a12 = build_operator(g1, g2_new, g2_new, dt, work.nu, "a")
    a11w = build_operator(g1, g1, g2_new, dt, work.nu, "a")
    bhat12 = build_operator(g1, g2_old, g2_old, dt, work.nu, "ahat")
    bhat11w = build_operator(g1, g1, g2_old, dt, work.nu, "ahat")
    a23 = build_operator(g2_new, g3_new, g3_new, dt, work.nu, "a")
    a22w = build_operator(g2_new, g2_new, g3_new, dt, work.nu, "a")

    terms = _source_terms(problem, t_mid)
    f1 = assemble_load(terms, g1, t_mid=t_mid)
    f2 = assemble_load(terms, g2_new, t_mid=t_mid)
    f3 = assemble_load(terms, g3_new, t_mid=t_mid)

    base1 = td.fold_rhs(f1, [
        (work.ahat_own[0], sp.scale(ubar_prev, -1.0)),
        (bhat12, sp.scale(u2_prev, -1.0)),
        (bhat11w, average_E(u2_prev, pl2_old, g1)),
    ], tol=work.tol)
    # the old inner-window fluctuation is tested against the moved mid-level
    # space, so it contributes only on the overlap of the two boxes
    terms2 = [(work.ahat_own[1], sp.scale(carried2, -1.0))]
    overlap = []
    for k in range(g1.dim):
        lo = max(g3_old.origin[k], g2_new.origin[k])
        hi = min(g3_old.origin[k] + g3_old.side_length,
                 g2_new.origin[k] + g2_new.side_length)
        overlap.append((lo, hi))
    if u3_prev.modes > 0 and all(hi - lo > 0.5 * g3_old.mesh_size for lo, hi in overlap):
        bhat23 = build_operator_box(g2_new, g3_old, overlap, dt, work.nu, "ahat")
        bhat22w = build_operator_box(g2_new, g2_old, overlap, dt, work.nu, "ahat")
        terms2.append((bhat23, sp.scale(u3_prev, -1.0)))
        terms2.append((bhat22w, average_E(u3_prev, pl3_old, g2_old)))
    base2 = td.fold_rhs(f2, terms2, tol=work.tol)
    base3 = td.fold_rhs(f3, [(work.ahat_own[2], sp.scale(carried3, -1.0))],
                       tol=work.tol)

    q1, q2, q3 = work.config.q_modes
    crit = work.criteria
    rounds = [0, 0, 0]
    ridge = 0
    solver_ok = True

    def solve_top(u2):
        rhs = td.fold_rhs(base1, [
            (a12, u2),
            (a11w, sp.scale(average_E(u2, pl2, g1), -1.0)),
        ], tol=work.tol)
        return td.solve_separated(work.a_own[0], rhs, q1, criteria=crit)

    def solve_mid(ubar, u3):
        rhs = td.fold_rhs(base2, [
            (a23, u3),
            (a22w, sp.scale(average_E(u3, pl3, g2_new), -1.0)),
        ], tol=work.tol)
        lift = interface_lifting(ubar, g1, g2_new, tol=work.tol)
        return td.solve_separated(work.a_own[1], rhs, q2, criteria=crit, lifting=lift)

    def solve_tip(u2):
        lift = interface_lifting(u2, g2_new, g3_new, tol=work.tol)
        return td.solve_separated(work.a_own[2], base3, q3, criteria=crit, lifting=lift)

    def absorb(res, idx):
        nonlocal ridge, solver_ok
        rounds[idx] += res.rounds
        ridge += res.ridge_hits
        solver_ok = solver_ok and res.converged
        return res.field

    u2 = sp.zero_field((g2_tpl.nodes_per_dim,) * g2_tpl.dim, level=g2_tpl.level)
    u3 = sp.zero_field((g3_tpl.nodes_per_dim,) * g3_tpl.dim, level=g3_tpl.level)
    ubar = ubar_prev
    theta_used = crit.theta_max
    inter_converged = False

    if work.config.accelerated:
        prev = None
        for theta in range(1, crit.theta_max + 1):
            ubar = absorb(solve_top(u2), 0)
            u2 = absorb(solve_mid(ubar, u3), 1)
            u3 = absorb(solve_tip(u2), 2)
            if prev is not None and _rel_change(ubar, prev[0]) < crit.scale_tol \
                    and _rel_change(u2, prev[1]) < crit.scale_tol:
                theta_used = theta
                inter_converged = True
                break
            prev = (ubar, u2)
    else:
        prev_top = None
        for theta in range(1, crit.theta_max + 1):
            ubar = absorb(solve_top(u2), 0)
            u3 = sp.zero_field((g3_tpl.nodes_per_dim,) * g3_tpl.dim, level=g3_tpl.level)
            prev_mid = None
            for _ in range(crit.theta_max):
                u2 = absorb(solve_mid(ubar, u3), 1)
                u3 = absorb(solve_tip(u2), 2)
                if prev_mid is not None and _rel_change(u2, prev_mid) < crit.scale_tol:
                    break
                prev_mid = u2
            if prev_top is not None and _rel_change(ubar, prev_top) < crit.scale_tol:
                theta_used = theta
                inter_converged = True
                break
            prev_top = ubar

    new_state = LevelState((ubar, u2, u3), (g1, g2_new, g3_new), n)
    diag = StepDiagnostics(n, theta_used, inter_converged, tuple(rounds), solver_ok,
                           ridge, (ubar.modes, u2.modes, u3.modes),
                           time.perf_counter() - t0)
    return new_state, diag


_STEPPERS = {1: _single_level_step, 2: two_level_step, 3: three_level_step}


def march(problem, grids, config: MarchConfig, on_step=None) -> RunReport:
    """March the coupled hierarchy through config.n_steps time steps."""
    if len(grids) not in _STEPPERS:
        raise ConfigInvalid(f"marching supports 1 to 3 levels, got {len(grids)}")
    work = _Workspace(problem, grids, config)
    stepper = _STEPPERS[len(grids)]
    state = initial_state(problem, grids)
    diags = []
    t0 = time.perf_counter()
    for _ in range(config.n_steps):
        state, diag = stepper(state, problem, work)
        diags.append(diag)
        if on_step is not None:
            on_step(state, diag)
    return RunReport(state, tuple(diags), time.perf_counter() - t0)


def _quad_coarse(back: SeparatedField, start: SeparatedField, end: SeparatedField,
                 tau: float, tol: float = sp.DEFAULT_TOL) -> SeparatedField:
    """Quadratic-in-time blend of three coarse fields at fraction tau."""
    out = sp.add(
        sp.add(sp.scale(back, 0.5 * tau * (tau - 1.0)),
               sp.scale(start, (1.0 - tau) * (1.0 + tau))),
        sp.scale(end, 0.5 * tau * (tau + 1.0)))
    return sp.compress(out, tolerance=tol)


def slab_march(problem, grids, config: MarchConfig, m: int, on_step=None) -> RunReport:
    """Two-level marching that solves the coarse scale only at slab ends.

    Interior coarse values come from a quadratic blend of the previous
    slab start, this slab start, and the slab-end iterate; the window
    field is marched through the slab against that frozen coarse data.
    The first slab has no history, so it marches the ordinary way.
    """
    if m < 1:
        raise ConfigInvalid("slab width m must be at least 1")
    if m == 1:
        return march(problem, grids, config, on_step)
    if len(grids) != 2:
        raise ConfigInvalid("slab marching is a two-level scheme")
    if config.n_steps % m:
        raise ConfigInvalid(f"slab width {m} must divide n_steps {config.n_steps}")

    work = _Workspace(problem, grids, config)
    crit = work.criteria
    g1, g2_tpl = work.grids
    q1, q2 = config.q_modes
    dt = work.dt
    t0 = time.perf_counter()

    state = initial_state(problem, grids)
    back_anchor = state.fields[0]
    diags = []
    for _ in range(m):
        state, diag = two_level_step(state, problem, work)
        diags.append(diag)
        if on_step is not None:
            on_step(state, diag)

    def fine_pass(start_state, coarse_at):
        """March the window through one slab against frozen coarse data.

        coarse_at(j) gives the coarse field at slab offset j (0 = start).
        Returns per-offset (coarse, fine, grid, fine-solve result).
        """
        u_f = start_state.fields[1]
        g_prev = start_state.grids[1]
        n0 = start_state.time_index
        rows = []
        for j in range(1, m + 1):
            n = n0 + j
            t_mid = (n - 0.5) * dt
            pl = place_subdomain(g1, g2_tpl, problem.center_at(n * dt), n)
            g_new = locate(g2_tpl, g1, pl)
            carried = transfer_moving(u_f, g_prev, g_new, coarse_at(j - 1), g1,
                                      tol=work.tol)
            load = assemble_load(_source_terms(problem, t_mid), g_new, t_mid=t_mid)
            base = td.fold_rhs(load, [(work.ahat_own[1], sp.scale(carried, -1.0))],
                               tol=work.tol)
            lift = interface_lifting(coarse_at(j), g1, g_new, tol=work.tol)
            res = td.solve_separated(work.a_own[1], base, q2, criteria=crit, lifting=lift)
            u_f = res.field
            g_prev = g_new
            rows.append((coarse_at(j), u_f, g_new, res))
        return rows

    for _ in range(1, config.n_steps // m):
        start_state = state
        ubar_start = start_state.fields[0]
        ubar_end = ubar_start
        n_end = start_state.time_index + m
        kappa_used = crit.theta_max
        converged = False
        rows = []
        prev_end = None
        for kappa in range(1, crit.theta_max + 1):
            def coarse_at(j, end=ubar_end):
                if j == 0:
                    return ubar_start
                if j == m:
                    return end
                return _quad_coarse(back_anchor, ubar_start, end, j / m,
                                    tol=work.tol)

            rows = fine_pass(start_state, coarse_at)
            # one ordinary-step coarse solve at the slab end
            ubar_em1 = coarse_at(m - 1)
            u_em1, g_em1 = rows[-2][1], rows[-2][2]
            u_end, g_end = rows[-1][1], rows[-1][2]
            pl_end = placement_of(g1, g_end, n_end)
            pl_em1 = placement_of(g1, g_em1, n_end - 1)
            a12 = build_operator(g1, g_end, g_end, dt, work.nu, "a")
            a11w = build_operator(g1, g1, g_end, dt, work.nu, "a")
            bhat12 = build_operator(g1, g_em1, g_em1, dt, work.nu, "ahat")
            bhat11w = build_operator(g1, g1, g_em1, dt, work.nu, "ahat")
            t_mid = (n_end - 0.5) * dt
            f1 = assemble_load(_source_terms(problem, t_mid), g1, t_mid=t_mid)
            rhs1 = td.fold_rhs(f1, [
                (work.ahat_own[0], sp.scale(ubar_em1, -1.0)),
                (bhat12, sp.scale(u_em1, -1.0)),
                (bhat11w, average_E(u_em1, pl_em1, g1)),
                (a12, u_end),
                (a11w, sp.scale(average_E(u_end, pl_end, g1), -1.0)),
            ], tol=work.tol)
            res1 = td.solve_separated(work.a_own[0], rhs1, q1, criteria=crit)
            ubar_end = res1.field
            if prev_end is not None and _rel_change(ubar_end, prev_end) < crit.scale_tol:
                kappa_used = kappa
                converged = True
                break
            prev_end = ubar_end

        # replay the slab once against the settled coarse data
        def coarse_final(j, end=ubar_end):
            if j == 0:
                return ubar_start
            if j == m:
                return end
            return _quad_coarse(back_anchor, ubar_start, end, j / m,
                                tol=work.tol)

        rows = fine_pass(start_state, coarse_final)
        for j, (ubar_j, u_j, g_j, res) in enumerate(rows, start=1):
            n = start_state.time_index + j
            step_state = LevelState((ubar_j, u_j), (g1, g_j), n)
            diag = StepDiagnostics(
                n, kappa_used, converged,
                (res1.rounds if j == m else 0, res.rounds), res.converged,
                res.ridge_hits, (ubar_j.modes, u_j.modes), 0.0)
            diags.append(diag)
            if on_step is not None:
                on_step(step_state, diag)
            if j == m:
                state = step_state
        back_anchor = ubar_start

    return RunReport(state, tuple(diags), time.perf_counter() - t0)
