"""Separated operators and loads: 1D mass/stiffness factors, same-scale and
cross-scale, and separated load vectors for the heat source.

The enabling trick is that every d-dimensional matrix in the scheme is a sum
of Kronecker products of 1D matrices, so assembly only ever runs 1D
quadrature; cross-scale blocks are never assembled in d dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import MisalignedInterval, RankOverflow, ShapeMismatch
from .grid import LevelGrid
from .separated import SeparatedField, zero_field

# 2-point Gauss on [-1, 1]; exact for cubics, enough for products of linears
_GAUSS2 = (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0]))

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class OperatorFactorSum:
    """Operator written as sum_a (coef_a folded in) prod_k M[a][k].

    ``terms[a][k]`` maps trial-axis-k nodal vectors to test-axis-k nodal
    vectors; scalar coefficients are folded into the axis-0 matrix.
    """

    terms: tuple[tuple[np.ndarray, ...], ...]
    test_level: int
    trial_level: int
    domain_box: tuple[tuple[float, float], ...]
    variant: str

    @property
    def term_count(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return len(self.terms[0])

    @property
    def test_lengths(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.terms[0])

    @property
    def trial_lengths(self) -> tuple[int, ...]:
        return tuple(m.shape[1] for m in self.terms[0])


@dataclass(frozen=True)
class SeparableSourceTerm:
    """One separable term: weight * prod_k g_k(x_k); g_k maps arrays to arrays."""

    weight: float
    axis_functions: tuple


def _cells_in_interval(g: LevelGrid, axis: int, lo: float, hi: float):
    """Index range of whole cells of g covering [lo, hi]; must align."""
    h = g.mesh_size
    a = (lo - g.origin[axis]) / h
    b = (hi - g.origin[axis]) / h
    if abs(a - round(a)) > _ALIGN_TOL / h or abs(b - round(b)) > _ALIGN_TOL / h:
        raise MisalignedInterval(f"[{lo}, {hi}] not on cell boundaries (h={h})")
    ia, ib = int(round(a)), int(round(b))
    if ia < 0 or ib > g.cells_per_dim or ia >= ib:
        raise MisalignedInterval(f"[{lo}, {hi}] outside the grid or empty")
    return ia, ib


def _gauss_points(g: LevelGrid, axis: int, lo: float, hi: float):
    """2-point Gauss nodes and weights on every cell of g inside [lo, hi]."""
    ia, ib = _cells_in_interval(g, axis, lo, hi)
    h = g.mesh_size
    centers = g.origin[axis] + h * (np.arange(ia, ib) + 0.5)
    pts = (centers[:, None] + (0.5 * h) * _GAUSS2[0][None, :]).ravel()
    wts = np.full(pts.shape, 0.5 * h)
    return pts, wts


def _hat_data(g: LevelGrid, axis: int, pts: np.ndarray, derivative: bool):
    """Spanning-node index and the two shape values at each point."""
    t = (pts - g.origin[axis]) / g.mesh_size
    idx = np.clip(np.floor(t + _ALIGN_TOL).astype(np.int64), 0, g.cells_per_dim - 1)
    loc = t - idx
    if derivative:
        v0 = np.full(pts.shape, -1.0 / g.mesh_size)
        v1 = np.full(pts.shape, 1.0 / g.mesh_size)
    else:
        v0 = 1.0 - loc
        v1 = loc.copy()
    return idx, v0, v1


def _pair_matrix(test, trial, d_test: bool, d_trial: bool) -> np.ndarray:
    tg, ta, tiv = test
    rg, ra, riv = trial
    if tuple(np.round(np.asarray(tiv), 12)) != tuple(np.round(np.asarray(riv), 12)):
        raise MisalignedInterval(f"test interval {tiv} != trial interval {riv}")
    lo, hi = float(tiv[0]), float(tiv[1])
    fine = tg if tg.mesh_size <= rg.mesh_size else rg
    fax = ta if fine is tg else ra
    pts, wts = _gauss_points(fine, fax, lo, hi)
    for g, axis in ((tg, ta), (rg, ra)):
        a = (lo - g.origin[axis]) / g.mesh_size
        b = (hi - g.origin[axis]) / g.mesh_size
        if a < -_ALIGN_TOL or b > g.cells_per_dim + _ALIGN_TOL:
            raise MisalignedInterval(f"[{lo}, {hi}] leaves the level-{g.level} axis box")
    ti, tv0, tv1 = _hat_data(tg, ta, pts, d_test)
    ri, rv0, rv1 = _hat_data(rg, ra, pts, d_trial)
    mat = np.zeros((tg.nodes_per_dim, rg.nodes_per_dim))
    _kernels.accumulate_pairs(mat, wts, ti, tv0, tv1, ri, rv0, rv1)
    return mat


def mass_1d(test, trial) -> np.ndarray:
    """1D mass matrix between two (grid, axis, interval) spaces."""
    return _pair_matrix(test, trial, False, False)


def stiffness_1d(test, trial) -> np.ndarray:
    """1D stiffness matrix between two (grid, axis, interval) spaces."""
    return _pair_matrix(test, trial, True, True)


def build_operator(
    test_grid: LevelGrid,
    trial_grid: LevelGrid,
    domain: LevelGrid,
    dt: float,
    nu: float,
    variant: str = "a",
) -> OperatorFactorSum:
    """Separated heat operator: (1/dt) mass-product term plus, per axis, a
    (+-nu/2) term with stiffness on that axis and mass on the others.

    ``variant`` "a" carries +nu/2, "ahat" carries -nu/2. ``domain`` is the
    grid whose box is the integration region (the whole domain or a window).
    """
    d = test_grid.dim
    box = tuple(
        (domain.origin[k], domain.origin[k] + domain.side_length) for k in range(d)
    )
    return build_operator_box(test_grid, trial_grid, box, dt, nu, variant)


def build_operator_box(
    test_grid: LevelGrid,
    trial_grid: LevelGrid,
    box,
    dt: float,
    nu: float,
    variant: str = "a",
) -> OperatorFactorSum:
    """build_operator over an explicit per-axis box, e.g. a window overlap."""
    if variant not in ("a", "ahat"):
        raise ShapeMismatch(f"variant must be 'a' or 'ahat', not {variant!r}")
    d = test_grid.dim
    box = tuple(tuple(map(float, box[k])) for k in range(d))
    mass = []
    stiff = []
    for k in range(d):
        mass.append(mass_1d((test_grid, k, box[k]), (trial_grid, k, box[k])))
        stiff.append(stiffness_1d((test_grid, k, box[k]), (trial_grid, k, box[k])))
    sgn = 1.0 if variant == "a" else -1.0
    terms = []
    first = [m.copy() for m in mass]
    first[0] *= 1.0 / dt
    terms.append(tuple(first))
    for k in range(d):
        t = [stiff[j] if j == k else mass[j] for j in range(d)]
        t[0] = t[0] * (sgn * nu / 2.0)
        terms.append(tuple(t))
    return OperatorFactorSum(
        terms=tuple(terms),
        test_level=test_grid.level,
        trial_level=trial_grid.level,
        domain_box=box,
        variant=variant,
    )


def apply_operator(op: OperatorFactorSum, u: SeparatedField) -> SeparatedField:
    """Apply a separated operator; output rank is term_count * Q."""
    if u.dim != op.dim or u.lengths != op.trial_lengths:
        raise ShapeMismatch(
            f"operator expects trial box {op.trial_lengths}, field has {u.lengths}"
        )
    if u.modes == 0:
        return zero_field(op.test_lengths, level=u.level)
    pieces = []
    for term in op.terms:
        pieces.append(tuple(u.factors[k] @ term[k].T for k in range(op.dim)))
    factors = tuple(
        np.vstack([p[k] for p in pieces]) for k in range(op.dim)
    )
    return SeparatedField(factors, level=u.level)


def _load_vector(g: LevelGrid, axis: int, interval, func) -> np.ndarray:
    pts, wts = _gauss_points(g, axis, float(interval[0]), float(interval[1]))
    idx, v0, v1 = _hat_data(g, axis, pts, False)
    vals = wts * np.asarray(func(pts), dtype=float)
    out = np.zeros(g.nodes_per_dim)
    np.add.at(out, idx, vals * v0)
    np.add.at(out, idx + 1, vals * v1)
    return out


def _box_of(g: LevelGrid):
    return tuple((g.origin[k], g.origin[k] + g.side_length) for k in range(g.dim))


def _raw_modes_2d(samples, tol, cap):
    u, s, vt = np.linalg.svd(samples, full_matrices=False)
    total = np.sqrt((s**2).sum())
    if total == 0.0:
        return []
    tails = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
    rank = int(np.sum(tails > tol * total))
    if rank > cap:
        raise RankOverflow(f"raw source needs {rank} modes, cap is {cap}")
    return [(s[i], u[:, i], vt[i]) for i in range(rank)]


def assemble_load(source, grid: LevelGrid, domain=None, t_mid: float = 0.0,
                  tol: float = 1e-10, mode_cap: int = 32) -> SeparatedField:
    """Separated load vector of the source tested against the grid's hats.

    ``source`` is either a list of SeparableSourceTerm (one output mode per
    term) or a raw callable f(*axis_arrays, t) evaluated at per-cell Gauss
    points, factored by SVD to ``tol``, then integrated factor by factor.
    """
    box = _box_of(grid) if domain is None else tuple(domain)
    d = grid.dim
    if callable(source):
        pts = []
        wts = []
        hats = []
        for k in range(d):
            p, w = _gauss_points(grid, k, float(box[k][0]), float(box[k][1]))
            pts.append(p)
            wts.append(w)
            hats.append(_hat_data(grid, k, p, False))
        if d == 2:
            samples = source(pts[0][:, None], pts[1][None, :], t_mid)
            samples = np.broadcast_to(samples, (len(pts[0]), len(pts[1])))
            triples = _raw_modes_2d(samples, tol, mode_cap)
            modes = [(s, (ux, vy)) for s, ux, vy in triples]
        elif d == 3:
            samples = source(
                pts[0][:, None, None], pts[1][None, :, None], pts[2][None, None, :], t_mid
            )
            samples = np.broadcast_to(samples, (len(pts[0]), len(pts[1]), len(pts[2])))
            flat = samples.reshape(len(pts[0]), -1)
            u, s, vt = np.linalg.svd(flat, full_matrices=False)
            total = np.sqrt((s**2).sum())
            modes = []
            if total > 0.0:
                tails = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
                rank = int(np.sum(tails > 0.5 * tol * total))
                if rank > mode_cap:
                    raise RankOverflow(f"raw source needs {rank} modes, cap is {mode_cap}")
                for i in range(rank):
                    plane = vt[i].reshape(len(pts[1]), len(pts[2]))
                    for s2, vy, vz in _raw_modes_2d(plane, 0.5 * tol, mode_cap):
                        modes.append((s[i] * s2, (u[:, i], vy, vz)))
                if len(modes) > mode_cap:
                    raise RankOverflow(
                        f"raw source needs {len(modes)} modes, cap is {mode_cap}"
                    )
        else:
            raise ShapeMismatch(f"raw loads support d in (2, 3), not {d}")
        if not modes:
            return zero_field(tuple(grid.nodes_per_dim for _ in range(d)), level=grid.level)
        rows = [[] for _ in range(d)]
        for s, axis_samples in modes:
            for k in range(d):
                vals = wts[k] * axis_samples[k] * (s if k == 0 else 1.0)
                idx, v0, v1 = hats[k]
                vec = np.zeros(grid.nodes_per_dim)
                np.add.at(vec, idx, vals * v0)
                np.add.at(vec, idx + 1, vals * v1)
                rows[k].append(vec)
        factors = tuple(np.vstack(r) for r in rows)
        out = SeparatedField(factors, level=grid.level)
    else:
        terms = list(source)
        if len(terms) > mode_cap:
            raise RankOverflow(f"source expansion has {len(terms)} terms, cap is {mode_cap}")
        if not terms:
            return zero_field(tuple(grid.nodes_per_dim for _ in range(d)), level=grid.level)
        rows = [[] for _ in range(d)]
        for term in terms:
            for k in range(d):
                vec = _load_vector(grid, k, box[k], term.axis_functions[k])
                if k == 0:
                    vec = vec * term.weight
                rows[k].append(vec)
        factors = tuple(np.vstack(r) for r in rows)
        out = SeparatedField(factors, level=grid.level)
    norm_rows = np.ones(out.modes)
    for fac in out.factors:
        norm_rows *= np.linalg.norm(fac, axis=1)
    total = np.sqrt(max((norm_rows**2).sum(), 0.0))
    if total == 0.0:
        return zero_field(out.lengths, level=grid.level)
    keep = norm_rows > tol * total
    if not np.any(keep):
        return zero_field(out.lengths, level=grid.level)
    factors = tuple(fac[keep] for fac in out.factors)
    return SeparatedField(factors, level=grid.level)
