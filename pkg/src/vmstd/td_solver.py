"""Alternating-direction solver for separated linear systems.

Solves sum_a sum_q (prod_k L_k,a) applied to mode q = rhs for all Q modes of
one axis at once: freezing the other axes turns the Galerkin system into a
dense (Q*N_int) x (Q*N_int) block system per direction, swept in a fixed
axis order until the round-to-round factor change stalls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from . import _kernels
from . import separated as sp
from .assembly import OperatorFactorSum, apply_operator
from .errors import ShapeMismatch, SingularSystem, ZeroField
from .separated import SeparatedField

FOLD_TOL = 1e-10

# below this LU reciprocal-condition estimate the block solve is treated as
# rank deficient (duplicate or vanishing frozen modes) and re-run with ridge
_RCOND_FLOOR = 1e-12


@dataclass(frozen=True)
class SolveCriteria:
    """Stopping rules: factor-change tolerance per sweep round, relative
    field-change tolerance between scale iterations, and iteration caps."""

    td_tol: float = 1e-2
    scale_tol: float = 1e-3
    rho_max: int = 50
    theta_max: int = 30


@dataclass(frozen=True)
class TDResult:
    field: SeparatedField
    converged: bool
    rounds: int
    criterion: float
    ridge_hits: int = 0


def sine_init(lengths, q_modes: int, level=None) -> SeparatedField:
    """Mode q factor on every axis is sin(q*pi*J/N), q = 1..Q."""
    factors = []
    for n_nodes in lengths:
        n = n_nodes - 1
        j = np.arange(n_nodes)
        fac = np.sin(np.outer(np.arange(1, q_modes + 1), j) * (np.pi / n))
        fac[:, 0] = 0.0
        fac[:, -1] = 0.0
        factors.append(fac)
    return SeparatedField(tuple(factors), level=level)


def fold_rhs(rhs: SeparatedField, known_terms, tol: float = FOLD_TOL) -> SeparatedField:
    """rhs minus applied known fields, mode-concatenated then compressed."""
    if not known_terms:
        return rhs
    scales = [sp.frobenius_norm(rhs)]
    out = rhs
    for op, u in known_terms:
        piece = apply_operator(op, u)
        scales.append(sp.frobenius_norm(piece))
        out = sp.add(out, sp.scale(piece, -1.0))
    out = sp.compress(out, tolerance=tol)
    if sp.frobenius_norm(out) <= tol * max(scales):
        return sp.zero_field(out.lengths, level=out.level, placement=out.placement)
    return out


def normalize_x(f: SeparatedField) -> SeparatedField:
    """Rescale so the stacked first-axis factors have unit Frobenius norm;
    the complementary factor goes onto the second axis."""
    if f.modes == 0:
        raise ZeroField("cannot normalize a zero field")
    s = np.linalg.norm(f.factors[0])
    if s == 0.0:
        raise ZeroField("all first-axis factors are zero")
    factors = (f.factors[0] / s, f.factors[1] * s) + f.factors[2:]
    return SeparatedField(factors, level=f.level, placement=f.placement)


def _try_lu_solve(a: np.ndarray, b: np.ndarray):
    """LU solve returning None when the factorization looks rank deficient."""
    lu, piv, info = lapack.dgetrf(a)
    if info != 0:
        return None
    rcond, _ = lapack.dgecon(lu, np.linalg.norm(a, 1), norm="1")
    if rcond < _RCOND_FLOOR:
        return None
    x, info = lapack.dgetrs(lu, piv, b)
    if info != 0 or not np.all(np.isfinite(x)):
        return None
    resid = np.linalg.norm(a @ x - b, np.inf)
    if resid > 1e-6 * max(np.linalg.norm(b, np.inf), 1e-300):
        return None
    return x


def _solve_block(a: np.ndarray, b: np.ndarray):
    """Direct solve with a one-shot ridge retry on singular systems."""
    x = _try_lu_solve(a, b)
    if x is not None:
        return x, False
    ridge = 1e-12 * max(float(np.abs(np.diagonal(a)).mean()), 1e-300)
    try:
        x = np.linalg.solve(a + ridge * np.eye(a.shape[0]), b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("direction system singular even with ridge") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("direction system produced non-finite values")
    return x, True


def direction_system(axis: int, field: SeparatedField, op: OperatorFactorSum,
                     rhs: SeparatedField):
    """Block system for one axis: entry weights are Gram contractions of the
    frozen-axis factors through the operator's per-axis factor matrices."""
    if field.lengths != op.trial_lengths or field.lengths != op.test_lengths:
        raise ShapeMismatch("direction sweep needs a square same-space operator")
    d = field.dim
    q = field.modes
    n_int = field.lengths[axis] - 2
    a_terms = op.term_count
    w = np.ones((a_terms, q, q))
    for a, term in enumerate(op.terms):
        for j in range(d):
            if j != axis:
                w[a] *= field.factors[j] @ term[j] @ field.factors[j].T
    mats = np.ascontiguousarray(
        np.stack([term[axis][1:-1, 1:-1] for term in op.terms])
    )
    big = _kernels.build_direction_blocks(np.ascontiguousarray(w), mats)
    if rhs.modes:
        c = np.ones((rhs.modes, q))
        for j in range(d):
            if j != axis:
                c *= rhs.factors[j] @ field.factors[j].T
        r = c.T @ rhs.factors[axis][:, 1:-1]
    else:
        r = np.zeros((q, n_int))
    return big, r.ravel()


def sweep_direction(axis: int, field: SeparatedField, op: OperatorFactorSum,
                    rhs: SeparatedField):
    """Solve all Q modes of one axis simultaneously; returns (field, ridge)."""
    big, b = direction_system(axis, field, op, rhs)
    x, ridged = _solve_block(big, b)
    q = field.modes
    fac = np.zeros((q, field.lengths[axis]))
    fac[:, 1:-1] = x.reshape(q, -1)
    factors = list(field.factors)
    factors[axis] = fac
    return SeparatedField(tuple(factors), level=field.level,
                          placement=field.placement), ridged


def round_criterion(new: SeparatedField, old_factors) -> float:
    """Root of the summed per-axis squared relative factor changes."""
    total = 0.0
    for fac, prev in zip(new.factors, old_factors):
        num = np.linalg.norm(fac - prev) ** 2
        den = np.linalg.norm(fac) ** 2
        if den == 0.0:
            if num > 0.0:
                return np.inf
            continue
        total += num / den
    return float(np.sqrt(total))


def solve_separated(op: OperatorFactorSum, rhs: SeparatedField, q_modes: int,
                    init="sine", criteria: SolveCriteria | None = None,
                    lifting: SeparatedField | None = None) -> TDResult:
    """Iterate axis sweeps until the round criterion drops below td_tol.

    With a lifting field the homogeneous-boundary correction is solved
    against the folded right side and the sum lifting + correction is
    returned with the lifting's boundary values intact.
    """
    crit = criteria or SolveCriteria()
    if lifting is not None and lifting.modes == 0:
        lifting = None
    if lifting is not None:
        rhs = fold_rhs(rhs, [(op, lifting)])
    lengths = op.trial_lengths
    zero = sp.zero_field(lengths, level=rhs.level, placement=rhs.placement)
    if q_modes <= 0 or sp.frobenius_norm(rhs) == 0.0:
        out = zero if lifting is None else sp.add(lifting, zero)
        return TDResult(out, True, 0, 0.0)
    field = sine_init(lengths, q_modes, level=rhs.level) if init == "sine" else init
    converged = False
    rounds = 0
    value = np.inf
    ridge_hits = 0
    for rho in range(1, crit.rho_max + 1):
        old = [fac.copy() for fac in field.factors]
        for axis in range(field.dim):
            field, ridged = sweep_direction(axis, field, op, rhs)
            ridge_hits += int(ridged)
            if axis == 0 and np.linalg.norm(field.factors[0]) > 0.0:
                field = normalize_x(field)
        value = round_criterion(field, old)
        rounds = rho
        if value < crit.td_tol:
            converged = True
            break
    out = field if lifting is None else sp.add(lifting, field)
    return TDResult(out, converged, rounds, value, ridge_hits)


def interior_residual(op: OperatorFactorSum, u: SeparatedField,
                      rhs: SeparatedField) -> float:
    """Frobenius norm of op(u) - rhs restricted to interior nodes."""
    res = sp.add(apply_operator(op, u), sp.scale(rhs, -1.0))
    box = [(1, n - 2) for n in res.lengths]
    return sp.frobenius_norm(sp.mask_box(res, box))
