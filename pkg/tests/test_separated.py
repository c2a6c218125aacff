"""Separated-field algebra against dense outer-product oracles."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmstd import grid, separated as sp
from vmstd.errors import BoxNotRectangular, IndexOutOfRange, OutOfDomain, ShapeMismatch


def random_field(rng, dim, q, lengths=None):
    if lengths is None:
        lengths = [rng.integers(2, 13) for _ in range(dim)]
    factors = tuple(rng.standard_normal((q, n)) for n in lengths)
    return sp.SeparatedField(factors)


def dense(f):
    return sp.reconstruct(f)


@st.composite
def fields(draw, dim=None, max_q=4, max_n=12):
    d = dim if dim is not None else draw(st.sampled_from([2, 3]))
    q = draw(st.integers(0, max_q))
    lengths = [draw(st.integers(2, max_n)) for _ in range(d)]
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    factors = tuple(rng.standard_normal((q, n)) for n in lengths)
    return sp.SeparatedField(factors)


class TestEvaluate:
    def test_zero_field(self):
        z = sp.zero_field((4, 4))
        assert sp.evaluate_nodal(z, (1, 2)) == 0.0

    def test_single_mode(self):
        f = sp.from_modes([[np.array([1.0, 2.0]), np.array([3.0, 4.0])]])
        assert sp.evaluate_nodal(f, (1, 1)) == pytest.approx(8.0)

    def test_matches_dense_everywhere(self):
        rng = np.random.default_rng(7)
        f = random_field(rng, 2, 2, (5, 5))
        full = dense(f)
        for i in range(5):
            for j in range(5):
                assert sp.evaluate_nodal(f, (i, j)) == pytest.approx(full[i, j], abs=1e-12)

    def test_bad_index(self):
        f = sp.from_modes([[np.ones(3), np.ones(3)]])
        with pytest.raises(IndexOutOfRange):
            sp.evaluate_nodal(f, (3, 0))


class TestEvaluatePoint:
    def grid2(self, n=8):
        (g,) = grid.build_hierarchy([(n, 1.0)], dim=2)
        return g

    def test_at_node_matches_nodal(self):
        rng = np.random.default_rng(3)
        g = self.grid2()
        f = random_field(rng, 2, 3, (9, 9))
        assert sp.evaluate_point(f, g, (3 / 8, 5 / 8)) == pytest.approx(
            sp.evaluate_nodal(f, (3, 5)), abs=1e-12
        )

    def test_cell_center_of_rank_one(self):
        g = self.grid2(2)
        f = sp.from_modes([[np.array([0.0, 2.0, 0.0]), np.array([0.0, 4.0, 0.0])]])
        # midpoint averages: 1.0 and 2.0
        assert sp.evaluate_point(f, g, (0.25, 0.25)) == pytest.approx(2.0)

    def test_matches_dense_bilinear(self):
        rng = np.random.default_rng(11)
        g = self.grid2()
        f = random_field(rng, 2, 3, (9, 9))
        full = dense(f)
        xs = rng.uniform(0.0, 1.0, size=(20, 2))
        for x, y in xs:
            i = min(int(x * 8), 7)
            j = min(int(y * 8), 7)
            tx = x * 8 - i
            ty = y * 8 - j
            want = (
                full[i, j] * (1 - tx) * (1 - ty)
                + full[i + 1, j] * tx * (1 - ty)
                + full[i, j + 1] * (1 - tx) * ty
                + full[i + 1, j + 1] * tx * ty
            )
            assert sp.evaluate_point(f, g, (x, y)) == pytest.approx(want, abs=1e-12)

    def test_outside_domain(self):
        g = self.grid2()
        f = sp.from_modes([[np.ones(9), np.ones(9)]])
        with pytest.raises(OutOfDomain):
            sp.evaluate_point(f, g, (1.5, 0.5))

    def test_never_densifies(self):
        # a grid this size cannot be reconstructed densely (8e15 nodes)
        n = 200_000
        rng = np.random.default_rng(1)
        f = sp.SeparatedField(tuple(rng.standard_normal((2, n + 1)) for _ in range(3)))
        (g,) = grid.build_hierarchy([(n, 1.0)], dim=3)
        sp.evaluate_point(f, g, (0.3, 0.5, 0.7))


class TestAddScaleMask:
    def test_add_zero_identity(self):
        rng = np.random.default_rng(5)
        a = random_field(rng, 2, 2, (6, 6))
        z = sp.zero_field((6, 6))
        assert np.allclose(dense(sp.add(a, z)), dense(a))

    def test_add_inverse_cancels(self):
        rng = np.random.default_rng(6)
        a = random_field(rng, 2, 2, (6, 6))
        s = sp.add(a, sp.scale(a, -1.0))
        assert s.modes == 4
        assert np.allclose(dense(s), 0.0, atol=1e-12)
        assert sp.frobenius_norm(s) < 1e-10 * sp.frobenius_norm(a)

    def test_add_matches_dense(self):
        rng = np.random.default_rng(8)
        a = random_field(rng, 2, 2, (6, 6))
        b = random_field(rng, 2, 3, (6, 6))
        c = sp.add(a, b)
        assert c.modes == 5
        assert np.allclose(dense(c), dense(a) + dense(b))

    def test_add_shape_mismatch(self):
        rng = np.random.default_rng(9)
        a = random_field(rng, 2, 2, (6, 6))
        b = random_field(rng, 2, 2, (6, 7))
        with pytest.raises(ShapeMismatch):
            sp.add(a, b)

    def test_mask_full_range_is_identity(self):
        rng = np.random.default_rng(10)
        a = random_field(rng, 2, 2, (8, 8))
        m = sp.mask_box(a, [(0, 7), (0, 7)])
        assert np.allclose(dense(m), dense(a))

    def test_mask_empty_is_zero(self):
        rng = np.random.default_rng(12)
        a = random_field(rng, 2, 2, (8, 8))
        m = sp.mask_box(a, [(3, 2), (0, 7)])
        assert m.modes == 0
        assert m.lengths == (8, 8)

    def test_mask_matches_dense(self):
        rng = np.random.default_rng(13)
        a = random_field(rng, 2, 2, (8, 8))
        m = sp.mask_box(a, [(2, 5), (1, 3)])
        want = np.zeros((8, 8))
        want[2:6, 1:4] = dense(a)[2:6, 1:4]
        assert np.allclose(dense(m), want, atol=1e-12)

    def test_mask_rejects_gappy_indices(self):
        rng = np.random.default_rng(14)
        a = random_field(rng, 2, 2, (8, 8))
        with pytest.raises(BoxNotRectangular):
            sp.mask_box(a, [np.array([0, 2, 3]), (0, 7)])


class TestNorm:
    def test_zero(self):
        assert sp.frobenius_norm(sp.zero_field((5, 5))) == 0.0

    def test_rank_one_factorizes(self):
        f = sp.from_modes([[np.array([3.0, 4.0]), np.array([1.0, 0.0])]])
        assert sp.frobenius_norm(f) == pytest.approx(5.0)

    def test_matches_dense(self):
        rng = np.random.default_rng(15)
        f = random_field(rng, 2, 3, (7, 7))
        assert sp.frobenius_norm(f) == pytest.approx(
            np.linalg.norm(dense(f)), rel=1e-12
        )


class TestCompress:
    def test_rank_one_unchanged(self):
        rng = np.random.default_rng(16)
        f = random_field(rng, 2, 1, (6, 6))
        g = sp.compress(f, target_q=1)
        assert np.allclose(dense(g), dense(f), atol=1e-12)

    def test_duplicate_modes_merge(self):
        v = [np.array([1.0, 2.0, 0.5]), np.array([0.0, 1.0, 3.0])]
        f = sp.from_modes([v, v])
        g = sp.compress(f, tolerance=1e-10)
        assert g.modes == 1
        assert np.allclose(dense(g), dense(f), atol=1e-10)

    def test_truncation_error_matches_dense_svd(self):
        rng = np.random.default_rng(17)
        f = random_field(rng, 2, 6, (10, 10))
        g = sp.compress(f, target_q=3)
        s = np.linalg.svd(dense(f), compute_uv=False)
        want = np.sqrt((s[3:] ** 2).sum())
        got = np.linalg.norm(dense(f) - dense(g))
        assert got == pytest.approx(want, abs=1e-10)

    def test_target_at_least_q_returns_input(self):
        rng = np.random.default_rng(18)
        f = random_field(rng, 2, 3, (6, 6))
        assert sp.compress(f, target_q=5) is f

    def test_3d_duplicate_modes_merge(self):
        v = [np.array([1.0, 2.0]), np.array([3.0, 1.0]), np.array([0.5, 2.0])]
        f = sp.from_modes([v, v, v])
        g = sp.compress(f, tolerance=1e-10)
        assert g.modes == 1
        assert np.allclose(dense(g), dense(f), atol=1e-10)

    def test_3d_error_within_tolerance(self):
        rng = np.random.default_rng(19)
        a = random_field(rng, 3, 2, (6, 6, 6))
        stack = sp.add(sp.add(a, sp.scale(a, 0.5)), random_field(rng, 3, 1, (6, 6, 6)))
        g = sp.compress(stack, tolerance=1e-8)
        assert g.modes <= stack.modes
        err = np.linalg.norm(dense(g) - dense(stack))
        assert err <= 1e-8 * sp.frobenius_norm(stack) + 1e-12

    def test_idempotent(self):
        rng = np.random.default_rng(20)
        f = random_field(rng, 2, 6, (10, 10))
        g1 = sp.compress(f, target_q=3)
        g2 = sp.compress(g1, target_q=3)
        assert np.allclose(dense(g1), dense(g2), atol=1e-10)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        f = random_field(rng, 2, 3, (5, 7))
        p = tmp_path / "f.txt"
        sp.save_field(f, p)
        g = sp.load_field(p)
        assert g.lengths == f.lengths
        assert np.allclose(dense(g), dense(f), rtol=0, atol=0)

    def test_zero_round_trip(self, tmp_path):
        z = sp.zero_field((4, 4, 4))
        p = tmp_path / "z.txt"
        sp.save_field(z, p)
        g = sp.load_field(p)
        assert g.modes == 0 and g.lengths == (4, 4, 4)


@given(fields())
@settings(max_examples=200, deadline=None)
def test_norm_matches_dense_property(f):
    assert sp.frobenius_norm(f) == pytest.approx(np.linalg.norm(dense(f)), abs=1e-9)


@given(fields(), st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_add_and_mask_match_dense_property(f, seed):
    rng = np.random.default_rng(seed)
    other = sp.SeparatedField(
        tuple(rng.standard_normal((2, n)) for n in f.lengths)
    )
    tot = sp.add(f, other)
    assert np.allclose(dense(tot), dense(f) + dense(other), atol=1e-9)
    box = []
    for n in f.lengths:
        lo = int(rng.integers(0, n))
        hi = int(rng.integers(lo, n))
        box.append((lo, hi))
    m = sp.mask_box(tot, box)
    want = np.zeros(f.lengths)
    sl = tuple(slice(lo, hi + 1) for lo, hi in box)
    want[sl] = dense(tot)[sl]
    assert np.allclose(dense(m), want, atol=1e-9)


@given(fields(max_q=6), st.floats(1e-12, 1e-6))
@settings(max_examples=200, deadline=None)
def test_compress_error_bound_property(f, tol):
    g = sp.compress(f, tolerance=tol)
    err = np.linalg.norm(dense(f) - dense(g))
    assert err <= tol * sp.frobenius_norm(f) + 1e-9
    assert g.modes <= f.modes
