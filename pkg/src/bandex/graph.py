"""Observation graphs over explored free space.

Vertices live on a square lattice (spacing aligned to the map origin, snapped
to the center of the containing cell) and carry four features: coordinates,
utility (frontier cells visible from the vertex), a guidepost flag for
previously visited vertices, and a robot-occupancy indicator (-1 self, +1
other robot, 0 empty).

Edges connect lattice neighbors whose straight segment crosses only
believed-free cells.  The attention mask is 0 where attention may flow:
both endpoints of an edge, every self pair (diagonal), and the attachment
edge of temporary vertices inserted for robots outside the explored area.
Navigable moves are the non-temporary edges only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .belief import BeliefMap, frontiers
from .world import FREE, OCCUPIED, UNKNOWN, GridMap


class GraphBuildError(ValueError):
    """No usable vertex exists for the requested pose."""


@dataclass(frozen=True)
class Vertex:
    coords: tuple[float, float]
    utility: int
    guidepost: int
    occupancy: int


@dataclass(frozen=True)
class InformativeGraph:
    coords: np.ndarray  # (N, 2) float64, meters
    utility: np.ndarray  # (N,) int64
    guidepost: np.ndarray  # (N,) uint8
    occupancy: np.ndarray  # (N,) int8
    neighbors: tuple  # tuple of sorted int64 arrays; navigable adjacency
    edge_mask: np.ndarray  # (N, N) uint8; 0 = attend, 1 = blocked
    current_index: int
    is_temp: np.ndarray  # (N,) bool
    extent_m: tuple[float, float]  # (width_m, height_m)
    spacing_m: float

    @property
    def n_vertices(self) -> int:
        return self.coords.shape[0]

    def vertex(self, i: int) -> Vertex:
        return Vertex(
            coords=(float(self.coords[i, 0]), float(self.coords[i, 1])),
            utility=int(self.utility[i]),
            guidepost=int(self.guidepost[i]),
            occupancy=int(self.occupancy[i]),
        )

    def action_targets(self) -> np.ndarray:
        """Indices of the navigable neighbors of the current vertex."""
        return self.neighbors[self.current_index]

    def feature_matrix(self, utility_norm: float) -> np.ndarray:
        """(N, 5) float32 rows: x/W, y/H, utility/norm, guidepost, occupancy."""
        w, h = self.extent_m
        out = np.empty((self.n_vertices, 5), dtype=np.float32)
        out[:, 0] = self.coords[:, 0] / w
        out[:, 1] = self.coords[:, 1] / h
        out[:, 2] = self.utility / utility_norm
        out[:, 3] = self.guidepost
        out[:, 4] = self.occupancy
        return out


def _lattice_vertices(cells: np.ndarray, resolution: float, spacing_m: float) -> np.ndarray:
    """Cell centers of FREE cells containing lattice points, as (N, 2) meters."""
    h, w = cells.shape
    step = spacing_m / resolution
    cols = np.unique(np.floor(np.arange(0.0, w - 1e-9, step)).astype(np.int64))
    rows = np.unique(np.floor(np.arange(0.0, h - 1e-9, step)).astype(np.int64))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr = rr.ravel()
    cc = cc.ravel()
    keep = cells[rr, cc] == FREE
    rr, cc = rr[keep], cc[keep]
    coords = np.stack([(cc + 0.5) * resolution, (rr + 0.5) * resolution], axis=1)
    return coords


def _cells_of(coords: np.ndarray, resolution: float) -> np.ndarray:
    """(N, 2) int64 (row, col) cells containing the given points."""
    out = np.empty((coords.shape[0], 2), dtype=np.int64)
    out[:, 0] = np.floor(coords[:, 1] / resolution).astype(np.int64)
    out[:, 1] = np.floor(coords[:, 0] / resolution).astype(np.int64)
    return out


def _collision_free_adjacency(
    coords: np.ndarray,
    blocked: np.ndarray,
    resolution: float,
    neighbor_radius_m: float,
    max_neighbors: int,
) -> tuple:
    """Mutually-kept nearest collision-free neighbors within the radius."""
    n = coords.shape[0]
    if n == 0:
        return ()
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    cand_i, cand_j = np.nonzero((dist < neighbor_radius_m) & (dist > 0))
    upper = cand_i < cand_j
    pairs = np.stack([cand_i[upper], cand_j[upper]], axis=1)
    if pairs.shape[0] > 0:
        clear = _kernels.pairs_clear(blocked, _cells_of(coords, resolution), pairs)
        pairs = pairs[clear.astype(bool)]
    kept: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        mine = pairs[(pairs[:, 0] == i) | (pairs[:, 1] == i)]
        others = np.where(mine[:, 0] == i, mine[:, 1], mine[:, 0])
        order = np.lexsort((others, dist[i, others]))
        kept[i] = list(others[order][:max_neighbors])
    out = []
    for i in range(n):
        mutual = sorted(j for j in kept[i] if i in kept[j])
        out.append(np.asarray(mutual, dtype=np.int64))
    return tuple(out)


def _mask_from_adjacency(neighbors: tuple) -> np.ndarray:
    n = len(neighbors)
    mask = np.ones((n, n), dtype=np.uint8)
    np.fill_diagonal(mask, 0)
    for i, nbrs in enumerate(neighbors):
        mask[i, nbrs] = 0
    return mask


def _nearest_vertex(coords: np.ndarray, pose_xy) -> tuple[int, float]:
    d = np.hypot(coords[:, 0] - pose_xy[0], coords[:, 1] - pose_xy[1])
    i = int(np.argmin(d))
    return i, float(d[i])


def _guidepost_flags(coords: np.ndarray, visited, spacing_m: float) -> np.ndarray:
    flags = np.zeros(coords.shape[0], dtype=np.uint8)
    if visited is None or len(visited) == 0:
        return flags
    pts = np.asarray(list(visited), dtype=np.float64).reshape(-1, 2)
    d2 = ((coords[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    flags[(d2 <= (spacing_m / 2.0) ** 2).any(axis=1)] = 1
    return flags


def vertex_utility(coords_xy, belief: BeliefMap, sensor_range_m: float) -> int:
    """Frontier cells within sensor range with a line of sight clear of
    believed-occupied cells (center-to-center sightlines)."""
    return int(_all_utilities(np.asarray([coords_xy], dtype=np.float64), belief,
                              sensor_range_m)[0])


def _all_utilities(coords: np.ndarray, belief: BeliefMap, sensor_range_m: float) -> np.ndarray:
    fr = frontiers(belief)
    if fr.shape[0] == 0:
        return np.zeros(coords.shape[0], dtype=np.int64)
    res = belief.resolution
    blocked = np.ascontiguousarray(belief.cells == OCCUPIED)
    return _kernels.count_visible_targets(
        blocked, _cells_of(coords, res), np.ascontiguousarray(fr, dtype=np.int64),
        sensor_range_m / res,
    )


def build_graph(
    belief: BeliefMap,
    self_pose,
    other_poses,
    visited,
    spacing_m: float,
    neighbor_radius_m: float,
    max_neighbors: int,
    sensor_range_m: float,
) -> InformativeGraph:
    """Observation graph over the believed-free lattice for one robot.

    Occupancy marks the vertex nearest the robot itself with -1 and any
    other robot standing within half a lattice step of a vertex with +1;
    robots outside the explored area are handled by insert_temp_vertex.
    """
    if not belief.is_free_at(self_pose[0], self_pose[1]):
        raise GraphBuildError("robot pose is not in believed-free space")
    coords = _lattice_vertices(belief.cells, belief.resolution, spacing_m)
    if coords.shape[0] == 0:
        raise GraphBuildError("no believed-free lattice vertex exists")
    blocked = np.ascontiguousarray(belief.cells != FREE)
    neighbors = _collision_free_adjacency(
        coords, blocked, belief.resolution, neighbor_radius_m, max_neighbors
    )
    utility = _all_utilities(coords, belief, sensor_range_m)
    guidepost = _guidepost_flags(coords, visited, spacing_m)
    occupancy = np.zeros(coords.shape[0], dtype=np.int8)
    for pose in other_poses:
        j, d = _nearest_vertex(coords, pose)
        if d <= spacing_m / 2.0:
            occupancy[j] = 1
    current, _ = _nearest_vertex(coords, self_pose)
    occupancy[current] = -1
    h, w = belief.cells.shape
    return InformativeGraph(
        coords=coords,
        utility=utility,
        guidepost=guidepost,
        occupancy=occupancy,
        neighbors=neighbors,
        edge_mask=_mask_from_adjacency(neighbors),
        current_index=current,
        is_temp=np.zeros(coords.shape[0], dtype=bool),
        extent_m=(w * belief.resolution, h * belief.resolution),
        spacing_m=spacing_m,
    )


def insert_temp_vertex(graph: InformativeGraph, external_robot_pose) -> InformativeGraph:
    """Attach a vertex for a robot standing outside the explored area.

    The new vertex is reachable by attention only (unmasked edge to the
    nearest existing vertex); it is never a navigation target.  If the pose
    is already covered by an existing vertex, that vertex is marked occupied
    instead and the graph is otherwise unchanged.
    """
    j, d = _nearest_vertex(graph.coords, external_robot_pose)
    if d <= graph.spacing_m / 2.0:
        occupancy = graph.occupancy.copy()
        if occupancy[j] != -1:
            occupancy[j] = 1
        return replace(graph, occupancy=occupancy)
    n = graph.n_vertices
    coords = np.vstack([graph.coords, [external_robot_pose]])
    mask = np.ones((n + 1, n + 1), dtype=np.uint8)
    mask[:n, :n] = graph.edge_mask
    mask[n, n] = 0
    mask[n, j] = 0
    mask[j, n] = 0
    return InformativeGraph(
        coords=coords,
        utility=np.append(graph.utility, 0),
        guidepost=np.append(graph.guidepost, 0),
        occupancy=np.append(graph.occupancy, np.int8(1)),
        neighbors=graph.neighbors + (np.empty(0, dtype=np.int64),),
        edge_mask=mask,
        current_index=graph.current_index,
        is_temp=np.append(graph.is_temp, True),
        extent_m=graph.extent_m,
        spacing_m=graph.spacing_m,
    )


def build_ground_truth_graph(
    truth: GridMap,
    merged_belief: BeliefMap,
    all_poses,
    robot_index: int,
    visited,
    spacing_m: float,
    neighbor_radius_m: float,
    max_neighbors: int,
    sensor_range_m: float,
) -> InformativeGraph:
    """Privileged graph over all true free space for one evaluated robot.

    Utility counts the still-unknown free cells inside the sensor disc of a
    vertex (no occlusion test); occupancy and guidepost follow the evaluated
    robot's point of view.
    """
    coords = _lattice_vertices(truth.cells, truth.resolution, spacing_m)
    if coords.shape[0] == 0:
        raise GraphBuildError("map has no free lattice vertex")
    blocked = np.ascontiguousarray(truth.cells == OCCUPIED)
    neighbors = _collision_free_adjacency(
        coords, blocked, truth.resolution, neighbor_radius_m, max_neighbors
    )
    utility = _disc_unknown_counts(truth, merged_belief, coords, sensor_range_m)
    guidepost = _guidepost_flags(coords, visited, spacing_m)
    occupancy = np.zeros(coords.shape[0], dtype=np.int8)
    for k, pose in enumerate(all_poses):
        if k == robot_index:
            continue
        jj, _ = _nearest_vertex(coords, pose)
        occupancy[jj] = 1
    current, _ = _nearest_vertex(coords, all_poses[robot_index])
    occupancy[current] = -1
    return InformativeGraph(
        coords=coords,
        utility=utility,
        guidepost=guidepost,
        occupancy=occupancy,
        neighbors=neighbors,
        edge_mask=_mask_from_adjacency(neighbors),
        current_index=current,
        is_temp=np.zeros(coords.shape[0], dtype=bool),
        extent_m=(truth.width_m, truth.height_m),
        spacing_m=spacing_m,
    )


def _disc_unknown_counts(
    truth: GridMap, belief: BeliefMap, coords: np.ndarray, sensor_range_m: float
) -> np.ndarray:
    """Per vertex: true-free cells within sensor range still unknown in the belief."""
    res = truth.resolution
    target = (truth.cells == FREE) & (belief.cells == UNKNOWN)
    rows, cols = np.nonzero(target)
    counts = np.zeros(coords.shape[0], dtype=np.int64)
    if rows.size == 0:
        return counts
    cx = (cols + 0.5) * res
    cy = (rows + 0.5) * res
    r2 = sensor_range_m * sensor_range_m
    for i in range(coords.shape[0]):
        d2 = (cx - coords[i, 0]) ** 2 + (cy - coords[i, 1]) ** 2
        counts[i] = int(np.count_nonzero(d2 <= r2))
    return counts


def graph_to_text(graph: InformativeGraph) -> str:
    """Line dump for visualization: 'V x y u g occ' rows then 'E i j' rows."""
    lines = []
    for i in range(graph.n_vertices):
        v = graph.vertex(i)
        lines.append(
            f"V {v.coords[0]:.3f} {v.coords[1]:.3f} {v.utility} {v.guidepost} {v.occupancy}"
        )
    for i, nbrs in enumerate(graph.neighbors):
        for j in nbrs:
            if i < j:
                lines.append(f"E {i} {j}")
    return "\n".join(lines) + "\n"
