"""Ground-truth environments: dungeon map generation and range sensing.

Cell labels are shared across the whole package: UNKNOWN (belief maps only),
FREE and OCCUPIED.  A grid is indexed [row, col]; the point (x, y) in meters
falls in cell (int(y/res), int(x/res)) and cell centers sit at
((col + 0.5) * res, (row + 0.5) * res).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)

_CHAR_OF = {int(UNKNOWN): "U", int(FREE): ".", int(OCCUPIED): "#"}
_LABEL_OF = {v: k for k, v in _CHAR_OF.items()}


class MapGenerationError(RuntimeError):
    """Raised when no connected map could be generated within the retry budget."""


@dataclass(frozen=True)
class GridMap:
    """Ground-truth occupancy grid; immutable after construction."""

    cells: np.ndarray  # (H, W) uint8 over {FREE, OCCUPIED}
    resolution: float  # meters per cell

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def width_m(self) -> float:
        return self.width_cells * self.resolution

    @property
    def height_m(self) -> float:
        return self.height_cells * self.resolution

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def free_fraction(self) -> float:
        return float(np.count_nonzero(self.cells == FREE)) / self.cells.size

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(y / self.resolution), int(x / self.resolution)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height_cells and 0 <= col < self.width_cells

    def is_free_at(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return self.in_bounds(r, c) and self.cells[r, c] == FREE


def cell_center(row: int, col: int, resolution: float) -> tuple[float, float]:
    return (col + 0.5) * resolution, (row + 0.5) * resolution


@dataclass(frozen=True)
class DungeonConfig:
    map_size_m: float
    room_count_range: tuple[int, int]
    corridor_width_m: float = 4.5
    seed: int = 0
    resolution_m: float = 0.25

    def __post_init__(self):
        if self.map_size_m <= 0:
            raise ValueError("map_size_m must be positive")
        lo, hi = self.room_count_range
        if lo > hi or lo < 1:
            raise ValueError("room_count_range must be a non-empty interval of >= 1")
        if self.resolution_m <= 0:
            raise ValueError("resolution_m must be positive")


@dataclass(frozen=True)
class SensorSpec:
    range_m: float
    ray_count: int = 360

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("range_m must be positive")
        if self.ray_count < 8:
            raise ValueError("ray_count must be >= 8")


def _carve_room(grid: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    grid[r0:r1, c0:c1] = FREE


def _carve_corridor(grid: np.ndarray, a: tuple[int, int], b: tuple[int, int], half: int, rng) -> None:
    """L-shaped corridor between two cell centers, half-width `half` cells."""
    (ra, ca), (rb, cb) = a, b
    n = grid.shape[0]
    if rng.integers(0, 2) == 0:
        legs = [(ra, ca, ra, cb), (ra, cb, rb, cb)]
    else:
        legs = [(ra, ca, rb, ca), (rb, ca, rb, cb)]
    for r0, c0, r1, c1 in legs:
        rlo, rhi = sorted((r0, r1))
        clo, chi = sorted((c0, c1))
        grid[
            max(1, rlo - half) : min(n - 1, rhi + half + 1),
            max(1, clo - half) : min(n - 1, chi + half + 1),
        ] = FREE


def _free_is_connected(cells: np.ndarray) -> bool:
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    _, n_comp = ndimage.label(cells == FREE, structure=four)
    return n_comp == 1


def generate_dungeon(config: DungeonConfig) -> GridMap:
    """Rooms-plus-corridors generator; retries until the free space is one
    4-connected component, raising MapGenerationError after a bounded budget.
    Identical (seed, config) pairs produce bit-identical maps.
    """
    rng = np.random.default_rng(config.seed)
    n = max(8, int(round(config.map_size_m / config.resolution_m)))
    half = max(0, int(round(config.corridor_width_m / config.resolution_m)) // 2)
    lo, hi = config.room_count_range
    for _ in range(32):
        grid = np.full((n, n), OCCUPIED, dtype=np.uint8)
        count = int(rng.integers(lo, hi + 1))
        if count == 1:
            _carve_room(grid, 1, 1, n - 1, n - 1)
        else:
            centers = []
            for _ in range(count):
                w = int(rng.integers(max(3, n // 6), max(4, n // 3)))
                h = int(rng.integers(max(3, n // 6), max(4, n // 3)))
                r0 = int(rng.integers(1, max(2, n - 1 - h)))
                c0 = int(rng.integers(1, max(2, n - 1 - w)))
                _carve_room(grid, r0, c0, r0 + h, c0 + w)
                centers.append((r0 + h // 2, c0 + w // 2))
            order = rng.permutation(len(centers))
            for i in range(len(order) - 1):
                _carve_corridor(grid, centers[order[i]], centers[order[i + 1]], half, rng)
        grid[0, :] = OCCUPIED
        grid[-1, :] = OCCUPIED
        grid[:, 0] = OCCUPIED
        grid[:, -1] = OCCUPIED
        if _free_is_connected(grid):
            return GridMap(cells=grid, resolution=config.resolution_m)
    raise MapGenerationError(f"no connected free space after retries (seed={config.seed})")


@dataclass
class RayTrace:
    """Cells a ray entered, in order, excluding the origin cell."""

    free_cells: list = field(default_factory=list)  # [(row, col), ...]
    hit_cell: tuple[int, int] | None = None


def _check_pose(grid: GridMap, x: float, y: float) -> None:
    r, c = grid.cell_of(x, y)
    if not grid.in_bounds(r, c):
        raise ValueError(f"pose ({x}, {y}) outside the map")
    if grid.cells[r, c] != FREE:
        raise ValueError(f"pose ({x}, {y}) lies in an occupied cell")


def raycast(grid: GridMap, origin_xy, direction_xy, max_range: float) -> RayTrace:
    """Exact traversal from origin along a unit direction until the first
    occupied cell or max_range, whichever comes first."""
    x, y = float(origin_xy[0]), float(origin_xy[1])
    _check_pose(grid, x, y)
    dx, dy = float(direction_xy[0]), float(direction_xy[1])
    norm = float(np.hypot(dx, dy))
    if norm == 0.0:
        raise ValueError("direction must be nonzero")
    res = grid.resolution
    max_cells = int(np.ceil(max_range / res)) * 2 + 4
    rows = np.empty(max_cells, dtype=np.int64)
    cols = np.empty(max_cells, dtype=np.int64)
    occ = np.ascontiguousarray(grid.cells == OCCUPIED)
    count, hit = _kernels.ray_walk(
        occ, x / res, y / res, dx / norm, dy / norm, max_range / res, rows, cols
    )
    trace = RayTrace()
    stop = count - 1 if hit else count
    trace.free_cells = [(int(rows[i]), int(cols[i])) for i in range(stop)]
    if hit:
        trace.hit_cell = (int(rows[count - 1]), int(cols[count - 1]))
    return trace


def sense(grid: GridMap, pose_xy, spec: SensorSpec) -> np.ndarray:
    """Omnidirectional scan: every cell whose center is within range and in
    line of sight of the pose's cell center, reported with its ground-truth
    label.

    Returns an (K, 3) int32 array of (row, col, label) in row-major order.
    Equivalent to casting one exact ray per candidate cell, so the result
    matches a brute-force segment-to-every-cell visibility test.  Waypoints
    in this package are always cell centers, so evaluating from the center
    loses nothing.
    """
    x, y = float(pose_xy[0]), float(pose_xy[1])
    _check_pose(grid, x, y)
    r0, c0 = grid.cell_of(x, y)
    occ = np.ascontiguousarray(grid.cells == OCCUPIED)
    mask = _kernels.visible_cells(occ, r0, c0, spec.range_m / grid.resolution)
    rows, cols = np.nonzero(mask)
    labels = grid.cells[rows, cols]
    return np.stack([rows, cols, labels], axis=1).astype(np.int32)


def save_grid_text(cells: np.ndarray, resolution: float) -> str:
    """Text grid with a 'width height resolution' header; rows top to bottom."""
    h, w = cells.shape
    buf = io.StringIO()
    buf.write(f"{w} {h} {resolution:g}\n")
    lookup = np.array([_CHAR_OF[0], _CHAR_OF[1], _CHAR_OF[2]])
    for r in range(h):
        buf.write("".join(lookup[cells[r]]) + "\n")
    return buf.getvalue()


def parse_grid_text(text: str) -> tuple[np.ndarray, float]:
    lines = text.strip().splitlines()
    w, h, res = lines[0].split()
    w, h, res = int(w), int(h), float(res)
    if len(lines) != h + 1:
        raise ValueError(f"expected {h} rows, found {len(lines) - 1}")
    cells = np.empty((h, w), dtype=np.uint8)
    for r, line in enumerate(lines[1:]):
        if len(line) != w:
            raise ValueError(f"row {r} has length {len(line)}, expected {w}")
        cells[r] = [_LABEL_OF[ch] for ch in line]
    return cells, res


def save_map(grid: GridMap, path) -> None:
    with open(path, "w") as f:
        f.write(save_grid_text(grid.cells, grid.resolution))


def load_map(path) -> GridMap:
    with open(path) as f:
        cells, res = parse_grid_text(f.read())
    if np.any(cells == UNKNOWN):
        raise ValueError("ground-truth map may not contain unknown cells")
    return GridMap(cells=cells, resolution=res)
