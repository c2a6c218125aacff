"""Separated (sum of tensor products) grid fields and their algebra.

A field on a d-dimensional tensor grid is stored as Q modes, each a product
of one nodal vector per axis; the represented grid function at multi-index
(j1..jd) is sum_q prod_k factor[k][q][j_k].  Everything here works on the
1D factors only and never allocates the full tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    BoxNotRectangular,
    IndexOutOfRange,
    OutOfDomain,
    ShapeMismatch,
)
from .grid import LevelGrid, SubdomainPlacement

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class SeparatedField:
    """Rank-Q separated field; ``factors[k]`` has shape (Q, n_k).

    ``level`` and ``placement`` are informational tags saying which grid of
    the hierarchy the nodal values live on; the algebra only looks at shapes.
    """

    factors: tuple[np.ndarray, ...]
    level: int | None = None
    placement: SubdomainPlacement | None = dc_field(default=None, compare=False)

    def __post_init__(self):
        if not self.factors:
            raise ShapeMismatch("a field needs at least one axis")
        q = self.factors[0].shape[0]
        for f in self.factors:
            if f.ndim != 2 or f.shape[0] != q:
                raise ShapeMismatch("factor arrays must share the mode count")

    @property
    def dim(self) -> int:
        return len(self.factors)

    @property
    def modes(self) -> int:
        return self.factors[0].shape[0]

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.factors)

    def tagged(self, level, placement=None) -> "SeparatedField":
        return SeparatedField(self.factors, level=level, placement=placement)


def zero_field(lengths, level=None, placement=None) -> SeparatedField:
    factors = tuple(np.zeros((0, n)) for n in lengths)
    return SeparatedField(factors, level=level, placement=placement)


def from_modes(axis_vectors, level=None, placement=None) -> SeparatedField:
    """Build a field from a list of modes, each a list of d 1D vectors."""
    if not axis_vectors:
        raise ShapeMismatch("from_modes needs at least one mode; use zero_field")
    d = len(axis_vectors[0])
    factors = []
    for k in range(d):
        rows = [np.asarray(m[k], dtype=float) for m in axis_vectors]
        lengths = {r.shape[0] for r in rows}
        if len(lengths) != 1:
            raise ShapeMismatch(f"axis {k} factor lengths differ: {sorted(lengths)}")
        factors.append(np.vstack(rows))
    return SeparatedField(tuple(factors), level=level, placement=placement)


def evaluate_nodal(f: SeparatedField, multi_index) -> float:
    if len(multi_index) != f.dim:
        raise IndexOutOfRange(f"need {f.dim} indices, got {len(multi_index)}")
    for k, j in enumerate(multi_index):
        if not 0 <= j < f.lengths[k]:
            raise IndexOutOfRange(f"axis {k}: index {j} outside 0..{f.lengths[k] - 1}")
    if f.modes == 0:
        return 0.0
    acc = np.ones(f.modes)
    for k, j in enumerate(multi_index):
        acc *= f.factors[k][:, j]
    return float(acc.sum())


def evaluate_point(f: SeparatedField, grid: LevelGrid, x) -> float:
    """Separable linear interpolation at physical point x; cost O(Q*d)."""
    if len(x) != f.dim:
        raise OutOfDomain(f"need {f.dim} coordinates, got {len(x)}")
    if f.modes == 0:
        return 0.0
    acc = np.ones(f.modes)
    for k in range(f.dim):
        n = f.lengths[k] - 1
        t = (x[k] - grid.origin[k]) / grid.mesh_size
        if t < -1e-9 or t > n + 1e-9:
            raise OutOfDomain(f"axis {k}: {x[k]} outside the field's box")
        j = min(max(int(np.floor(t)), 0), n - 1)
        w = t - j
        acc *= f.factors[k][:, j] * (1.0 - w) + f.factors[k][:, j + 1] * w
    return float(acc.sum())


def add(a: SeparatedField, b: SeparatedField) -> SeparatedField:
    if a.dim != b.dim or a.lengths != b.lengths:
        raise ShapeMismatch(f"cannot add fields on boxes {a.lengths} and {b.lengths}")
    factors = tuple(np.vstack([fa, fb]) for fa, fb in zip(a.factors, b.factors))
    return SeparatedField(factors, level=a.level, placement=a.placement)


def scale(a: SeparatedField, alpha: float) -> SeparatedField:
    if a.modes == 0:
        return a
    factors = (a.factors[0] * alpha,) + a.factors[1:]
    return SeparatedField(factors, level=a.level, placement=a.placement)


def _axis_range(sel, n: int):
    """Normalize one axis of a mask box to an inclusive (lo, hi) pair."""
    arr = np.asarray(sel)
    if arr.shape == (2,) and arr.dtype.kind in "iu":
        lo, hi = int(arr[0]), int(arr[1])
    elif arr.ndim == 1 and arr.size > 0 and arr.dtype.kind in "iu":
        srt = np.sort(arr)
        if np.any(np.diff(srt) != 1):
            raise BoxNotRectangular("mask indices must form a contiguous range")
        lo, hi = int(srt[0]), int(srt[-1])
    elif arr.ndim == 1 and arr.size == 0:
        return 0, -1
    else:
        raise BoxNotRectangular(f"cannot read {sel!r} as an index range")
    if lo > hi:
        return 0, -1
    if lo < 0 or hi >= n:
        raise IndexOutOfRange(f"range {lo}..{hi} outside 0..{n - 1}")
    return lo, hi


def mask_box(f: SeparatedField, box) -> SeparatedField:
    """Zero the field outside an axis-aligned index box (inclusive bounds)."""
    if len(box) != f.dim:
        raise BoxNotRectangular(f"box needs {f.dim} axis ranges")
    ranges = [_axis_range(sel, n) for sel, n in zip(box, f.lengths)]
    if any(lo > hi for lo, hi in ranges):
        return zero_field(f.lengths, level=f.level, placement=f.placement)
    factors = []
    for (lo, hi), fac in zip(ranges, f.factors):
        g = fac.copy()
        g[:, :lo] = 0.0
        g[:, hi + 1 :] = 0.0
        factors.append(g)
    return SeparatedField(tuple(factors), level=f.level, placement=f.placement)


def gram(a: SeparatedField, b: SeparatedField) -> np.ndarray:
    """Cross-Gram: entry (q, q') = prod_k <a_kq, b_kq'>."""
    if a.dim != b.dim or a.lengths != b.lengths:
        raise ShapeMismatch("gram needs fields on the same box")
    g = np.ones((a.modes, b.modes))
    for fa, fb in zip(a.factors, b.factors):
        g *= fa @ fb.T
    return g


def inner(a: SeparatedField, b: SeparatedField) -> float:
    """Euclidean inner product of the nodal reconstructions."""
    return float(gram(a, b).sum())


def frobenius_norm(f: SeparatedField) -> float:
    if f.modes == 0:
        return 0.0
    return float(np.sqrt(max(inner(f, f), 0.0)))


def reconstruct(f: SeparatedField) -> np.ndarray:
    """Dense nodal tensor; only for small grids (tests, reference output)."""
    out = np.zeros(f.lengths)
    letters = "abcd"[: f.dim]
    spec = ",".join(f"q{c}" for c in letters) + "->" + letters
    if f.modes:
        out = np.einsum(spec, *f.factors)
    return out


def _mode_norms(f: SeparatedField) -> np.ndarray:
    norms = np.ones(f.modes)
    for fac in f.factors:
        norms *= np.linalg.norm(fac, axis=1)
    return norms


def _take_modes(f: SeparatedField, idx) -> SeparatedField:
    factors = tuple(fac[idx] for fac in f.factors)
    return SeparatedField(factors, level=f.level, placement=f.placement)


def _compress_2d(f: SeparatedField, target_q, tol_rel) -> SeparatedField:
    x, y = f.factors
    qx, rx = np.linalg.qr(x.T, mode="reduced")
    qy, ry = np.linalg.qr(y.T, mode="reduced")
    u, s, vt = np.linalg.svd(rx @ ry.T)
    total = np.sqrt((s**2).sum())
    if total == 0.0:
        return zero_field(f.lengths, level=f.level, placement=f.placement)
    keep = s > 1e-15 * s[0]
    if tol_rel is not None:
        tails = np.sqrt(np.cumsum((s**2)[::-1]))[::-1]
        # tails[i] = rss of s[i:]; keep the shortest head with tail <= tol
        keep &= np.concatenate([[True], tails[1:] > tol_rel * total])
    r = int(keep.sum())
    if target_q is not None:
        r = min(r, target_q)
    if r >= f.modes:
        return f
    xf = (qx @ (u[:, :r] * s[:r])).T
    yf = (qy @ vt[:r].T).T
    return SeparatedField((xf, yf), level=f.level, placement=f.placement)


def _axis_basis(f: SeparatedField, k: int, tol_abs: float) -> np.ndarray:
    """Orthonormal basis of the dominant axis-k subspace of the reconstruction."""
    w = np.ones((f.modes, f.modes))
    for j, fac in enumerate(f.factors):
        if j != k:
            w *= fac @ fac.T
    qk, rk = np.linalg.qr(f.factors[k].T, mode="reduced")
    s = rk @ w @ rk.T
    lam, vec = np.linalg.eigh(0.5 * (s + s.T))
    lam = np.maximum(lam, 0.0)
    tails = np.sqrt(np.cumsum(lam))
    # lam ascending: drop the longest prefix whose energy stays below tol
    cut = int(np.searchsorted(tails, tol_abs, side="right"))
    cut = min(cut, len(lam) - 1)
    return qk @ vec[:, cut:]


def _merge_duplicates(f: SeparatedField, tol_abs: float) -> SeparatedField:
    norms = _mode_norms(f)
    alive = norms > 1e-300
    if not np.any(alive):
        return zero_field(f.lengths, level=f.level, placement=f.placement)
    f = _take_modes(f, np.where(alive)[0])
    norms = norms[alive]
    units = []
    coeff = norms.copy()
    for fac in f.factors:
        u = fac / np.linalg.norm(fac, axis=1, keepdims=True)
        sign = np.where(u[np.arange(len(u)), np.abs(u).argmax(axis=1)] < 0, -1.0, 1.0)
        coeff *= sign
        units.append(u * sign[:, None])
    groups: list[list[int]] = []
    for q in range(f.modes):
        for g in groups:
            ref = g[0]
            if all(np.allclose(u[q], u[ref], atol=1e-12) for u in units):
                g.append(q)
                break
        else:
            groups.append([q])
    reps = []
    merged = []
    for g in groups:
        c = coeff[g].sum()
        reps.append(g[0])
        merged.append(c)
    merged = np.asarray(merged)
    keep = np.abs(merged) > max(tol_abs / max(len(groups), 1), 1e-300)
    if not np.any(keep):
        return zero_field(f.lengths, level=f.level, placement=f.placement)
    reps = np.asarray(reps)[keep]
    merged = merged[keep]
    factors = [units[0][reps] * merged[:, None]]
    factors += [u[reps] for u in units[1:]]
    return SeparatedField(tuple(factors), level=f.level, placement=f.placement)


def _compress_3d(f: SeparatedField, target_q, tol_rel) -> SeparatedField:
    total = frobenius_norm(f)
    if total == 0.0:
        return zero_field(f.lengths, level=f.level, placement=f.placement)
    tol_axis = (tol_rel if tol_rel is not None else 0.0) * total / (f.dim + 1)
    factors = list(f.factors)
    for k in range(f.dim):
        basis = _axis_basis(SeparatedField(tuple(factors)), k, tol_axis)
        factors[k] = (factors[k] @ basis) @ basis.T
    g = SeparatedField(tuple(factors), level=f.level, placement=f.placement)
    g = _merge_duplicates(g, tol_axis)
    if target_q is not None and g.modes > target_q:
        order = np.argsort(_mode_norms(g))[::-1]
        g = _take_modes(g, np.sort(order[:target_q]))
    if g.modes >= f.modes:
        return f
    return g


def compress(f: SeparatedField, target_q: int | None = None, tolerance: float | None = None) -> SeparatedField:
    """Reduce the mode count.

    d=2 uses the exact truncated SVD of the factorization (QR of the factor
    blocks plus a small-core SVD; the dense matrix is never formed), so the
    discarded Frobenius mass equals the dropped singular values exactly.
    d=3 projects each axis onto its dominant subspace in sequence, then
    merges modes that became parallel; the error is bounded by the sum of
    per-axis discarded tails.  Requesting target_q >= Q returns the input.
    """
    if f.modes == 0:
        return f
    if target_q is not None and target_q >= f.modes and tolerance is None:
        return f
    if target_q is None and tolerance is None:
        tolerance = DEFAULT_TOL
    if f.dim == 2:
        return _compress_2d(f, target_q, tolerance)
    return _compress_3d(f, target_q, tolerance)


def save_field(f: SeparatedField, path) -> None:
    """Text dump: one header line (d, Q, per-axis lengths), then factor
    vectors one per line, axis-major then mode-major, 17 significant digits."""
    lines = [" ".join(str(v) for v in (f.dim, f.modes, *f.lengths))]
    for fac in f.factors:
        for row in fac:
            lines.append(" ".join("%.17g" % v for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path) -> SeparatedField:
    with open(path) as fh:
        header = fh.readline().split()
        d, q = int(header[0]), int(header[1])
        lengths = [int(v) for v in header[2 : 2 + d]]
        factors = []
        for n in lengths:
            rows = [np.array(fh.readline().split(), dtype=float) for _ in range(q)]
            fac = np.vstack(rows) if rows else np.zeros((0, n))
            if fac.shape != (q, n):
                raise OSError(f"malformed field file {path}")
            factors.append(fac)
    return SeparatedField(tuple(factors))
