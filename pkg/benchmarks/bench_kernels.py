"""Time the two kernel backends on solver-realistic shapes.

Run as a script; prints per-call milliseconds for the numpy fallback
and the numba fast path (after a JIT warmup call), plus the ratio.
Shapes mirror actual use: pair accumulation sees two Gauss points per
cell on one axis, direction blocks see (terms, modes, nodes) drawn
from the two- and three-level study configurations.
"""

import time

import numpy as np

from vmstd import _kernels

if not _kernels.USING_NUMBA:
    raise SystemExit("numba backend unavailable; set VMSTD_BACKEND=auto "
                     "and install numba to compare")


def time_call(fn, *args, repeats=20):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return 1e3 * (time.perf_counter() - t0) / repeats


def pair_case(rng, n_cells):
    n_pts = 2 * n_cells
    w = rng.uniform(0.1, 1.0, n_pts)
    ti = np.repeat(np.arange(n_cells), 2)
    ri = ti.copy()
    tv0, tv1, rv0, rv1 = rng.normal(size=(4, n_pts))
    return w, ti, tv0, tv1, ri, rv0, rv1


def bench_accumulate(rng):
    print("accumulate_pairs (1D assembly, 2 Gauss points per cell)")
    print("  cells    numpy ms    numba ms    speedup")
    for n_cells in (64, 512, 1024, 4096):
        args = pair_case(rng, n_cells)
        mat = np.zeros((n_cells + 1, n_cells + 1))
        ms_np = time_call(_kernels._accumulate_pairs_numpy, mat, *args)
        ms_nb = time_call(_kernels._accumulate_pairs_numba, mat, *args)
        print("  %6d %10.4f %11.4f %9.1fx"
              % (n_cells, ms_np, ms_nb, ms_np / ms_nb))


def bench_blocks(rng):
    print("build_direction_blocks (per-axis sweep system)")
    print("  terms  q  nodes    numpy ms    numba ms    speedup")
    for a_terms, q, n in ((3, 2, 63), (3, 2, 511), (3, 4, 511), (5, 4, 127)):
        weights = rng.normal(size=(a_terms, q, q))
        mats = rng.normal(size=(a_terms, n, n))
        ms_np = time_call(_kernels._build_blocks_numpy, weights, mats)
        ms_nb = time_call(_kernels._build_blocks_numba, weights, mats)
        print("  %5d %2d %6d %10.4f %11.4f %9.1fx"
              % (a_terms, q, n, ms_np, ms_nb, ms_np / ms_nb))


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    bench_accumulate(rng)
    print()
    bench_blocks(rng)
