"""Grid traversal kernels shared by the simulator, graph builder and planners.

All geometry runs in "cell units" (meters divided by the map resolution), with
cell (row, col) = (floor(v), floor(u)) for a point (u, v).  Segment traversal
visits every cell whose interior the segment crosses; an exact corner crossing
steps diagonally, so the traversed set matches dense sub-cell sampling of the
segment.  The start cell is never part of a traversal.
"""

import numpy as np
from numba import njit



@njit(cache=True)
def _setup_axis(u0, du, c, length):
    """Per-axis stepping state: (step, t_at_first_crossing, t_per_cell)."""
    if du > 0.0:
        step = 1
        t_max = (c + 1.0 - u0) * length / du
        t_delta = length / du
    elif du < 0.0:
        step = -1
        t_max = (u0 - c) * length / (-du)
        t_delta = length / (-du)
    else:
        step = 0
        t_max = np.inf
        t_delta = np.inf
    return step, t_max, t_delta


@njit(cache=True)
def blocked_center_to_center(blocked, r0, c0, r1, c1):
    """True if the open segment between two cell centers crosses a blocked
    cell interior.  Exact integer arithmetic: boundary-crossing parameters
    are compared by cross-multiplication in doubled cell coordinates, so a
    segment through a lattice corner steps diagonally and never clips the
    zero-overlap side cells.  Neither endpoint cell is tested, so a blocked
    target stays reachable (walls are visible).
    """
    if r0 == r1 and c0 == c1:
        return False
    a = 2 * c0 + 1
    b = 2 * r0 + 1
    dx = (2 * c1 + 1) - a
    dy = (2 * r1 + 1) - b
    sx = 1 if dx > 0 else (-1 if dx < 0 else 0)
    sy = 1 if dy > 0 else (-1 if dy < 0 else 0)
    qx = dx if dx > 0 else -dx
    qy = dy if dy > 0 else -dy
    cx, cy = c0, r0
    px = np.int64(1)  # distance (doubled units) to the next x boundary
    py = np.int64(1)
    while True:
        x_next = sx != 0 and px < qx
        y_next = sy != 0 and py < qy
        if not x_next and not y_next:
            return False  # endpoint inside the current cell
        if x_next and (not y_next or px * qy < py * qx):
            cx += sx
            px += 2
        elif y_next and (not x_next or py * qx < px * qy):
            cy += sy
            py += 2
        else:  # exact corner crossing: step diagonally
            cx += sx
            cy += sy
            px += 2
            py += 2
        if cx == c1 and cy == r1:
            return False
        if blocked[cy, cx]:
            return True


@njit(cache=True)
def ray_walk(occupied, u0, v0, dir_u, dir_v, max_t, out_rows, out_cols):
    """Walk a ray up to max_t, recording entered cells.

    Returns (count, hit) where cells [0:count) are the entered cells in order;
    hit is 1 if the last recorded cell is occupied (ray stopped there), else 0
    (range-out or left the grid).
    """
    cx = int(np.floor(u0))
    cy = int(np.floor(v0))
    step_x, t_max_x, t_delta_x = _setup_axis(u0, dir_u * max_t, cx, max_t)
    step_y, t_max_y, t_delta_y = _setup_axis(v0, dir_v * max_t, cy, max_t)
    h, w = occupied.shape
    count = 0
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            if t >= max_t:
                return count, 0
            cx += step_x
            t_max_x += t_delta_x
        elif t_max_y < t_max_x:
            t = t_max_y
            if t >= max_t:
                return count, 0
            cy += step_y
            t_max_y += t_delta_y
        else:
            t = t_max_x
            if t >= max_t:
                return count, 0
            cx += step_x
            cy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        if cy < 0 or cy >= h or cx < 0 or cx >= w:
            return count, 0
        out_rows[count] = cy
        out_cols[count] = cx
        count += 1
        if occupied[cy, cx]:
            return count, 1


@njit(cache=True)
def visible_cells(occupied, r0, c0, range_cells):
    """Visibility of every cell whose center lies within range of the center
    of cell (r0, c0).

    A cell is visible when the segment between the two centers is clear of
    occupied cells (the cell itself may be occupied: walls show).  Returns a
    uint8 grid mask.
    """
    h, w = occupied.shape
    out = np.zeros((h, w), dtype=np.uint8)
    reach = int(np.ceil(range_cells))
    r_lo = max(0, r0 - reach)
    r_hi = min(h - 1, r0 + reach)
    c_lo = max(0, c0 - reach)
    c_hi = min(w - 1, c0 + reach)
    limit2 = range_cells * range_cells
    for r in range(r_lo, r_hi + 1):
        for c in range(c_lo, c_hi + 1):
            d2 = float((r - r0) * (r - r0) + (c - c0) * (c - c0))
            if d2 > limit2:
                continue
            if not blocked_center_to_center(occupied, r0, c0, r, c):
                out[r, c] = 1
    return out


@njit(cache=True)
def count_visible_targets(blocked, point_cells, target_cells, range_cells):
    """Per point cell, the number of target cells within range with a clear
    center-to-center sightline."""
    n_points = point_cells.shape[0]
    n_targets = target_cells.shape[0]
    counts = np.zeros(n_points, dtype=np.int64)
    limit2 = range_cells * range_cells
    for i in range(n_points):
        r0 = point_cells[i, 0]
        c0 = point_cells[i, 1]
        n = 0
        for j in range(n_targets):
            r1 = target_cells[j, 0]
            c1 = target_cells[j, 1]
            d2 = float((r1 - r0) * (r1 - r0) + (c1 - c0) * (c1 - c0))
            if d2 > limit2:
                continue
            if not blocked_center_to_center(blocked, r0, c0, r1, c1):
                n += 1
        counts[i] = n
    return counts


@njit(cache=True)
def visibility_matrix(blocked, point_cells, target_cells, range_cells):
    """(P, T) uint8 incidence: target within range and sightline clear."""
    n_points = point_cells.shape[0]
    n_targets = target_cells.shape[0]
    out = np.zeros((n_points, n_targets), dtype=np.uint8)
    limit2 = range_cells * range_cells
    for i in range(n_points):
        r0 = point_cells[i, 0]
        c0 = point_cells[i, 1]
        for j in range(n_targets):
            r1 = target_cells[j, 0]
            c1 = target_cells[j, 1]
            d2 = float((r1 - r0) * (r1 - r0) + (c1 - c0) * (c1 - c0))
            if d2 > limit2:
                continue
            if not blocked_center_to_center(blocked, r0, c0, r1, c1):
                out[i, j] = 1
    return out


@njit(cache=True)
def pairs_clear(blocked, point_cells, pairs):
    """For each (i, j) pair of point cells, whether the connecting
    center-to-center segment is clear."""
    n = pairs.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    for k in range(n):
        i = pairs[k, 0]
        j = pairs[k, 1]
        if not blocked_center_to_center(
            blocked, point_cells[i, 0], point_cells[i, 1],
            point_cells[j, 0], point_cells[j, 1],
        ):
            out[k] = 1
    return out
