"""Per-robot belief maps: monotone updates, frontier extraction, merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .world import FREE, OCCUPIED, UNKNOWN, GridMap, parse_grid_text, save_grid_text


@dataclass(frozen=True)
class BeliefMap:
    """Tri-state map in the same frame as the paired ground-truth grid."""

    cells: np.ndarray  # (H, W) uint8 over {UNKNOWN, FREE, OCCUPIED}
    resolution: float

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @classmethod
    def unknown_like(cls, grid: GridMap) -> "BeliefMap":
        return cls(cells=np.zeros_like(grid.cells), resolution=grid.resolution)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != UNKNOWN))

    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def is_free_at(self, x: float, y: float) -> bool:
        r, c = int(y / self.resolution), int(x / self.resolution)
        h, w = self.cells.shape
        return 0 <= r < h and 0 <= c < w and self.cells[r, c] == FREE


def update_belief(belief: BeliefMap, observation: np.ndarray) -> BeliefMap:
    """Write observed labels into a fresh belief; unknown count never grows.

    `observation` is the (K, 3) (row, col, label) array produced by
    world.sense on the paired ground-truth map.
    """
    if observation.size == 0:
        return belief
    rows = observation[:, 0]
    cols = observation[:, 1]
    h, w = belief.cells.shape
    if rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w:
        raise ValueError("observation cell outside the belief grid")
    cells = belief.cells.copy()
    cells[rows, cols] = observation[:, 2].astype(np.uint8)
    return BeliefMap(cells=cells, resolution=belief.resolution)


_EIGHT = np.ones((3, 3), dtype=bool)


def frontiers(belief: BeliefMap) -> np.ndarray:
    """Free cells 8-adjacent to at least one unknown cell, as (F, 2) rows."""
    unknown = belief.cells == UNKNOWN
    if not unknown.any():
        return np.empty((0, 2), dtype=np.int64)
    near_unknown = ndimage.binary_dilation(unknown, structure=_EIGHT)
    mask = near_unknown & (belief.cells == FREE)
    rows, cols = np.nonzero(mask)
    return np.stack([rows, cols], axis=1)


def merge(beliefs: list[BeliefMap]) -> BeliefMap:
    """Union of known cells.  Inputs are consistent by construction (every
    known label equals the ground truth), so cell-wise max is the union."""
    if not beliefs:
        raise ValueError("merge needs at least one belief")
    first = beliefs[0]
    out = first.cells.copy()
    for b in beliefs[1:]:
        if b.cells.shape != first.cells.shape or b.resolution != first.resolution:
            raise ValueError("belief maps do not share one grid frame")
        np.maximum(out, b.cells, out=out)
    return BeliefMap(cells=out, resolution=first.resolution)


def exploration_rate(merged: BeliefMap, truth: GridMap) -> float:
    """Fraction of the true free area currently known free."""
    total_free = int(np.count_nonzero(truth.cells == FREE))
    if total_free == 0:
        raise ValueError("ground truth has no free cells")
    known_free = int(np.count_nonzero(merged.cells == FREE))
    return known_free / total_free


def save_belief_text(belief: BeliefMap) -> str:
    return save_grid_text(belief.cells, belief.resolution)


def load_belief_text(text: str) -> BeliefMap:
    cells, res = parse_grid_text(text)
    return BeliefMap(cells=cells, resolution=res)
