"""Hierarchy construction, window placement, and hat-function tests."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmstd import grid
from vmstd.errors import (
    IndexOutOfRange,
    MisalignedWindow,
    NonIntegerCoarseningRatio,
    OutOfDomain,
    WindowLargerThanParent,
)


def two_level_2d():
    return grid.build_hierarchy([(64, 1.0), (64, 0.125)], dim=2)


class TestBuildHierarchy:
    def test_reference_two_level(self):
        g1, g2 = two_level_2d()
        assert g1.mesh_size == pytest.approx(1.0 / 64, rel=1e-15)
        assert g2.mesh_size == pytest.approx(1.0 / 512, rel=1e-15)
        assert g1.mesh_size / g2.mesh_size == pytest.approx(8.0, rel=1e-15)

    def test_degenerate_identity_coarsening(self):
        g1, g2 = grid.build_hierarchy([(8, 1.0), (8, 1.0)], dim=2)
        assert g1.mesh_size == g2.mesh_size == pytest.approx(1.0 / 8)
        assert grid.window_cells(g1, g2) == 8

    def test_reference_three_level(self):
        g1, g2, g3 = grid.build_hierarchy([(64, 1.0), (64, 0.25), (64, 1.0 / 16)], dim=3)
        assert g1.mesh_size == pytest.approx(1.0 / 64, rel=1e-15)
        assert g2.mesh_size == pytest.approx(1.0 / 256, rel=1e-15)
        assert g3.mesh_size == pytest.approx(1.0 / 1024, rel=1e-15)
        assert g1.mesh_size / g2.mesh_size == pytest.approx(4.0)
        assert g2.mesh_size / g3.mesh_size == pytest.approx(4.0)

    def test_side_times_cells_is_length(self):
        for g in two_level_2d():
            assert g.mesh_size * g.cells_per_dim == pytest.approx(g.side_length, rel=1e-15)

    def test_rejects_non_integer_ratio(self):
        # h1/h2 = 36/8 = 4.5
        with pytest.raises(NonIntegerCoarseningRatio):
            grid.build_hierarchy([(64, 1.0), (36, 0.125)], dim=2)

    def test_rejects_child_larger_than_parent(self):
        with pytest.raises(WindowLargerThanParent):
            grid.build_hierarchy([(64, 1.0), (64, 2.0)], dim=2)

    def test_rejects_window_off_parent_cells(self):
        # ratio is 8 but the window spans 7.5 coarse cells
        with pytest.raises(MisalignedWindow):
            grid.build_hierarchy([(64, 1.0), (60, 60.0 / 512)], dim=2)


class TestPlacement:
    def test_centered_window(self):
        g1, g2 = two_level_2d()
        p = grid.place_subdomain(g1, g2, (0.5, 0.5), n=0)
        assert p.lower_corner == (28, 28)
        assert p.extent_cells == (8, 8)

    def test_clamped_at_corner(self):
        g1, g2 = two_level_2d()
        p = grid.place_subdomain(g1, g2, (0.0, 0.0), n=0)
        assert p.lower_corner == (0, 0)
        assert p.extent_cells == (8, 8)

    def test_round_half_even_center(self):
        g1, g2 = two_level_2d()
        # 0.3 * 64 = 19.2 -> node 19; corner = 19 - 4
        p = grid.place_subdomain(g1, g2, (0.3, 0.3), n=0)
        assert p.lower_corner == (15, 15)

    def test_tie_rounds_to_even_node(self):
        g1, g2 = two_level_2d()
        # 20.5 cells is exactly between nodes 20 and 21
        x = 20.5 / 64
        p = grid.place_subdomain(g1, g2, (x, x), n=0)
        assert p.lower_corner == (20 - 4, 20 - 4)

    def test_source_outside_domain(self):
        g1, g2 = two_level_2d()
        with pytest.raises(OutOfDomain):
            grid.place_subdomain(g1, g2, (1.5, 0.5), n=0)

    def test_locate_puts_child_nodes_on_parent_lines(self):
        g1, g2 = two_level_2d()
        p = grid.place_subdomain(g1, g2, (0.31, 0.64), n=3)
        child = grid.locate(g2, g1, p)
        for k in range(2):
            offs = (child.axis_nodes(k)[::8] - g1.origin[k]) / g1.mesh_size
            assert np.allclose(offs, np.rint(offs), atol=1e-12)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_window_always_inside_parent(self, cx, cy):
        g1, g2 = two_level_2d()
        p = grid.place_subdomain(g1, g2, (cx, cy), n=0)
        for lo, w in zip(p.lower_corner, p.extent_cells):
            assert 0 <= lo and lo + w <= g1.cells_per_dim


class TestHatValue:
    def test_nodal_value(self):
        (g1,) = grid.build_hierarchy([(8, 1.0)], dim=2)
        assert grid.hat_value(g1, 0, 3, 3.0 / 8) == pytest.approx(1.0)

    def test_midpoint_value(self):
        (g1,) = grid.build_hierarchy([(8, 1.0)], dim=2)
        assert grid.hat_value(g1, 0, 3, 3.5 / 8) == pytest.approx(0.5)

    def test_outside_support(self):
        (g1,) = grid.build_hierarchy([(8, 1.0)], dim=2)
        assert grid.hat_value(g1, 0, 3, 5.0 / 8) == 0.0

    def test_bad_index(self):
        (g1,) = grid.build_hierarchy([(8, 1.0)], dim=2)
        with pytest.raises(IndexOutOfRange):
            grid.hat_value(g1, 0, 9, 0.5)

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_partition_of_unity(self, x):
        (g1,) = grid.build_hierarchy([(8, 1.0)], dim=2)
        total = sum(grid.hat_value(g1, 0, j, x) for j in range(g1.nodes_per_dim))
        assert total == pytest.approx(1.0, abs=1e-12)
