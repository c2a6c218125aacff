"""Hot inner loops with a numba fast path and a pure-numpy fallback.

The backend is picked once at import from the VMSTD_BACKEND environment
variable: "numba", "numpy", or "auto" (default; numba when importable).
Only genuinely loop-bound work lives here; BLAS-bound solves do not.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND = os.environ.get("VMSTD_BACKEND", "auto").lower()
if BACKEND not in ("auto", "numba", "numpy"):
    raise ValueError(f"VMSTD_BACKEND must be auto, numba, or numpy, not {BACKEND!r}")

_njit = None
if BACKEND in ("auto", "numba"):
    try:
        from numba import njit as _njit
    except ImportError:
        if BACKEND == "numba":
            raise
        _njit = None

USING_NUMBA = _njit is not None


def _accumulate_pairs_numpy(mat, w, ti, tv0, tv1, ri, rv0, rv1):
    np.add.at(mat, (ti, ri), w * tv0 * rv0)
    np.add.at(mat, (ti, ri + 1), w * tv0 * rv1)
    np.add.at(mat, (ti + 1, ri), w * tv1 * rv0)
    np.add.at(mat, (ti + 1, ri + 1), w * tv1 * rv1)


def _build_blocks_numpy(weights, mats):
    # weights (A, Q, Q), mats (A, n, n) -> (Q*n, Q*n)
    a, q, _ = weights.shape
    n = mats.shape[1]
    big = np.tensordot(weights, mats, axes=([0], [0]))
    return big.transpose(0, 2, 1, 3).reshape(q * n, q * n)


if USING_NUMBA:

    @_njit(cache=True)
    def _accumulate_pairs_numba(mat, w, ti, tv0, tv1, ri, rv0, rv1):  # pragma: no cover
        for g in range(w.shape[0]):
            i = ti[g]
            j = ri[g]
            mat[i, j] += w[g] * tv0[g] * rv0[g]
            mat[i, j + 1] += w[g] * tv0[g] * rv1[g]
            mat[i + 1, j] += w[g] * tv1[g] * rv0[g]
            mat[i + 1, j + 1] += w[g] * tv1[g] * rv1[g]

    @_njit(cache=True)
    def _build_blocks_numba(weights, mats):  # pragma: no cover
        a, q, _ = weights.shape
        n = mats.shape[1]
        out = np.zeros((q * n, q * n))
        for i in range(q):
            for k in range(q):
                for t in range(a):
                    w = weights[t, i, k]
                    if w == 0.0:
                        continue
                    for r in range(n):
                        for c in range(n):
                            out[i * n + r, k * n + c] += w * mats[t, r, c]
        return out

    accumulate_pairs = _accumulate_pairs_numba
    build_direction_blocks = _build_blocks_numba
else:
    accumulate_pairs = _accumulate_pairs_numpy
    build_direction_blocks = _build_blocks_numpy
