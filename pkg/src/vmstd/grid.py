"""Nested uniform grids, 1D hat functions, and moving-window placement."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConfigInvalid,
    IndexOutOfRange,
    MisalignedWindow,
    NonIntegerCoarseningRatio,
    OutOfDomain,
    WindowLargerThanParent,
)

# absolute slack for "lands on a node" checks; domains are O(1) in size
_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class LevelGrid:
    """One level of the hierarchy: a uniform grid on an axis-aligned cube.

    Level 1 covers the whole domain and its origin is fixed; finer levels
    are templates whose origin is set when the window is placed.
    """

    level: int
    dim: int
    cells_per_dim: int
    mesh_size: float
    side_length: float
    origin: tuple[float, ...]

    @property
    def nodes_per_dim(self) -> int:
        return self.cells_per_dim + 1

    def node_coord(self, axis: int, index: int) -> float:
        return self.origin[axis] + index * self.mesh_size

    def axis_nodes(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.mesh_size * np.arange(self.nodes_per_dim)

    def contains(self, x) -> bool:
        for k in range(self.dim):
            lo = self.origin[k]
            if not lo - _ALIGN_TOL <= x[k] <= lo + self.side_length + _ALIGN_TOL:
                return False
        return True


@dataclass(frozen=True)
class SubdomainPlacement:
    """Where a refinement window sits, in parent node-index space."""

    level: int
    lower_corner: tuple[int, ...]
    extent_cells: tuple[int, ...]
    time_step: int


def build_hierarchy(levels, dim: int) -> list[LevelGrid]:
    """Build the grid hierarchy from per-level (cell count, side length) pairs.

    ``levels[0]`` is the coarsest level and covers the whole domain.
    Every finer side length must be an integer number of parent cells wide
    and the mesh-size ratio between adjacent levels must be an integer.
    """
    if dim not in (2, 3):
        raise ConfigInvalid(f"dim must be 2 or 3, got {dim}")
    if not levels:
        raise ConfigInvalid("at least one level is required")
    grids: list[LevelGrid] = []
    for i, (n_cells, side) in enumerate(levels):
        n_cells = int(n_cells)
        side = float(side)
        if n_cells < 1 or side <= 0.0:
            raise ConfigInvalid(f"level {i + 1}: need positive cell count and side length")
        h = side / n_cells
        if grids:
            parent = grids[-1]
            if side > parent.side_length + _ALIGN_TOL:
                raise WindowLargerThanParent(
                    f"level {i + 1} side {side} exceeds parent side {parent.side_length}"
                )
            ratio = parent.mesh_size / h
            if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
                raise NonIntegerCoarseningRatio(
                    f"h{i}/h{i + 1} = {ratio} is not a positive integer"
                )
            width = side / parent.mesh_size
            if abs(width - round(width)) > 1e-9 * max(width, 1.0):
                raise MisalignedWindow(
                    f"level {i + 1} side {side} is not a whole number of parent cells"
                )
        grids.append(
            LevelGrid(
                level=i + 1,
                dim=dim,
                cells_per_dim=n_cells,
                mesh_size=h,
                side_length=side,
                origin=(0.0,) * dim,
            )
        )
    return grids


def window_cells(parent: LevelGrid, child: LevelGrid) -> int:
    """Window width of ``child`` in whole parent cells."""
    width = child.side_length / parent.mesh_size
    w = int(round(width))
    if abs(width - w) > 1e-9 * max(width, 1.0) or w < 1:
        raise MisalignedWindow(
            f"child side {child.side_length} is not a whole number of parent cells"
        )
    return w


def place_subdomain(parent: LevelGrid, child: LevelGrid, source_center, n: int) -> SubdomainPlacement:
    """Center the child window on the parent node nearest the source.

    The center index is rounded half-to-even, then the window is clamped
    so it never leaves the parent domain; its size never shrinks.
    """
    if not parent.contains(source_center):
        raise OutOfDomain(f"source center {tuple(source_center)} outside level-{parent.level} box")
    w = window_cells(parent, child)
    if w > parent.cells_per_dim:
        raise WindowLargerThanParent(
            f"window of {w} cells exceeds parent extent {parent.cells_per_dim}"
        )
    corner = []
    for k in range(parent.dim):
        frac = (source_center[k] - parent.origin[k]) / parent.mesh_size
        center = int(np.rint(frac))
        lo = min(max(center - w // 2, 0), parent.cells_per_dim - w)
        corner.append(lo)
    return SubdomainPlacement(
        level=child.level,
        lower_corner=tuple(corner),
        extent_cells=(w,) * parent.dim,
        time_step=n,
    )


def locate(child: LevelGrid, parent: LevelGrid, placement: SubdomainPlacement) -> LevelGrid:
    """Realize the child template at a placement: same grid, shifted origin."""
    if placement.level != child.level:
        raise MisalignedWindow(
            f"placement for level {placement.level} applied to level {child.level}"
        )
    origin = tuple(
        parent.node_coord(k, placement.lower_corner[k]) for k in range(parent.dim)
    )
    return replace(child, origin=origin)


def hat_value(grid: LevelGrid, axis: int, node_index: int, x: float) -> float:
    """Piecewise-linear hat of node ``node_index`` along ``axis`` at ``x``."""
    if not 0 <= node_index <= grid.cells_per_dim:
        raise IndexOutOfRange(
            f"node {node_index} outside 0..{grid.cells_per_dim}"
        )
    t = (x - grid.node_coord(axis, node_index)) / grid.mesh_size
    return max(0.0, 1.0 - abs(t))
