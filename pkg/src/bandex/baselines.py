"""Conventional planners: mTSP-based frontier planner, nearest-frontier and
uniform-random policies.

The mTSP planner works on the shared merged belief: frontiers are covered by
greedily chosen viewpoints, viewpoints are assigned and ordered by a MinMax
solver (exact dynamic programming on small instances, greedy insertion plus
local search accepted only when the maximum tour strictly shrinks otherwise),
and every robot advances one lattice hop toward its first assigned viewpoint.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import _kernels
from .belief import BeliefMap, frontiers
from .config import GeometryConfig
from .graph import InformativeGraph, _collision_free_adjacency, _lattice_vertices
from .world import FREE, OCCUPIED


@dataclass
class ViewpointSet:
    points: np.ndarray  # (V, 2) meters, believed-free
    gains: np.ndarray  # (V,) frontier cells first covered by this viewpoint

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass
class TourPlan:
    tours: list  # per robot: list of viewpoint indices, visit order
    max_length: float = 0.0
    lengths: list = field(default_factory=list)


def sample_viewpoints(merged_belief: BeliefMap, sensor_range_m: float, min_gain: int,
                      spacing_m: float) -> ViewpointSet:
    """Greedy set cover of the frontier cells by believed-free lattice points.

    Repeatedly picks the point seeing the most uncovered frontiers, removes
    what it covers, and stops once fewer than min_gain frontiers remain or no
    candidate sees any.
    """
    fr = frontiers(merged_belief)
    empty = ViewpointSet(points=np.empty((0, 2)), gains=np.empty(0, dtype=np.int64))
    if fr.shape[0] == 0:
        return empty
    res = merged_belief.resolution
    cand = _lattice_vertices(merged_belief.cells, res, spacing_m)
    if cand.shape[0] == 0:
        return empty
    blocked = np.ascontiguousarray(merged_belief.cells == OCCUPIED)
    cand_cells = np.stack([
        np.floor(cand[:, 1] / res).astype(np.int64),
        np.floor(cand[:, 0] / res).astype(np.int64),
    ], axis=1)
    seen = _kernels.visibility_matrix(
        blocked, cand_cells, np.ascontiguousarray(fr, dtype=np.int64),
        sensor_range_m / res,
    ).astype(bool)
    alive = np.ones(fr.shape[0], dtype=bool)
    picked, gains = [], []
    while int(alive.sum()) >= min_gain:
        counts = (seen & alive).sum(axis=1)
        best = int(np.argmax(counts))
        if counts[best] == 0:
            break
        picked.append(best)
        gains.append(int(counts[best]))
        alive &= ~seen[best]
    if not picked:
        return empty
    return ViewpointSet(points=cand[picked], gains=np.asarray(gains, dtype=np.int64))


def _grid_graph(free_mask: np.ndarray, resolution: float):
    """Sparse 8-connected graph over free cells; diagonal cost sqrt(2)*res."""
    h, w = free_mask.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, costs = [], [], []
    steps = [(0, 1, resolution), (1, 0, resolution),
             (1, 1, resolution * np.sqrt(2.0)), (1, -1, resolution * np.sqrt(2.0))]
    for dr, dc, cost in steps:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        ok = free_mask[r0:r1, c0:c1] & free_mask[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        rows.append(a[ok])
        cols.append(b[ok])
        costs.append(np.full(int(ok.sum()), cost))
    data = np.concatenate(costs)
    i = np.concatenate(rows)
    j = np.concatenate(cols)
    return coo_matrix((data, (i, j)), shape=(h * w, h * w)).tocsr()


def distance_fields(free_mask: np.ndarray, resolution: float, source_cells) -> np.ndarray:
    """(S, H, W) shortest-path distance from each source cell over free space."""
    h, w = free_mask.shape
    g = _grid_graph(free_mask, resolution)
    sources = [r * w + c for r, c in source_cells]
    dist = dijkstra(g, directed=False, indices=sources)
    return dist.reshape(len(sources), h, w)


def nearest_field(free_mask: np.ndarray, resolution: float, source_cells) -> np.ndarray:
    """(H, W) distance to the closest of many sources."""
    h, w = free_mask.shape
    g = _grid_graph(free_mask, resolution)
    sources = [r * w + c for r, c in source_cells]
    dist = dijkstra(g, directed=False, indices=sources, min_only=True)
    return dist.reshape(h, w)


def shortest_path_matrix(points, merged_belief: BeliefMap) -> np.ndarray:
    """Symmetric matrix of grid shortest-path lengths between points (meters);
    unreachable pairs are infinite."""
    res = merged_belief.resolution
    cells = [(int(p[1] / res), int(p[0] / res)) for p in points]
    for (r, c), p in zip(cells, points):
        if merged_belief.cells[r, c] != FREE:
            raise ValueError(f"point {tuple(p)} is not in believed-free space")
    fields = distance_fields(merged_belief.free_mask(), res, cells)
    n = len(points)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = fields[i, cells[j][0], cells[j][1]]
    return np.minimum(out, out.T)  # symmetrize exact ties from dijkstra


# --- MinMax mTSP -----------------------------------------------------------------

EXACT_VIEWPOINT_LIMIT = 8
EXACT_ROBOT_LIMIT = 3


def _tour_length(start: int, tour: list[int], dist: np.ndarray) -> float:
    total = 0.0
    prev = start
    for v in tour:
        total += dist[prev, v]
        prev = v
    return total


def _plan_lengths(tours: list, dist: np.ndarray, n_robots: int) -> list[float]:
    return [_tour_length(r, tours[r], dist) for r in range(n_robots)]


def _solve_exact(n_robots: int, viewpoint_ids: list[int], dist: np.ndarray) -> list:
    """MinMax optimum by Held-Karp open paths per robot plus assignment
    enumeration; tractable for <= 8 viewpoints and <= 3 robots."""
    v = len(viewpoint_ids)
    full = 1 << v
    best_cost = np.full((n_robots, full), np.inf)
    best_path: list[dict] = [dict() for _ in range(n_robots)]
    for r in range(n_robots):
        dp = np.full((full, v), np.inf)
        parent = np.full((full, v), -1, dtype=np.int64)
        for j in range(v):
            dp[1 << j, j] = dist[r, viewpoint_ids[j]]
        for s in range(1, full):
            for j in range(v):
                if not s & (1 << j) or not np.isfinite(dp[s, j]):
                    continue
                for k in range(v):
                    if s & (1 << k):
                        continue
                    ns = s | (1 << k)
                    cost = dp[s, j] + dist[viewpoint_ids[j], viewpoint_ids[k]]
                    if cost < dp[ns, k]:
                        dp[ns, k] = cost
                        parent[ns, k] = j
        best_cost[r, 0] = 0.0
        best_path[r][0] = []
        for s in range(1, full):
            j = int(np.argmin(dp[s]))
            if np.isfinite(dp[s, j]):
                best_cost[r, s] = dp[s, j]
                path = []
                cur, cs = j, s
                while cur >= 0:
                    path.append(cur)
                    nxt = int(parent[cs, cur])
                    cs ^= 1 << cur
                    cur = nxt
                best_path[r][s] = path[::-1]
    best_assign, best_obj = None, np.inf
    for assign in range(n_robots**v):
        subsets = [0] * n_robots
        a = assign
        for j in range(v):
            subsets[a % n_robots] |= 1 << j
            a //= n_robots
        obj = max(best_cost[r, subsets[r]] for r in range(n_robots))
        if obj < best_obj:
            best_obj = obj
            best_assign = subsets
    tours = []
    for r in range(n_robots):
        order = best_path[r].get(best_assign[r], [])
        tours.append([viewpoint_ids[j] for j in order])
    return tours


def _local_search(tours: list, dist: np.ndarray, n_robots: int, trace=None) -> list:
    """2-opt within tours plus relocate/swap across tours; a move is accepted
    only when it strictly decreases the maximum tour length."""
    lengths = _plan_lengths(tours, dist, n_robots)
    improved = True
    while improved:
        improved = False
        cur_max = max(lengths)
        # 2-opt (segment reversal) inside each tour
        for r in range(n_robots):
            t = tours[r]
            for i in range(len(t) - 1):
                for j in range(i + 1, len(t)):
                    cand = t[:i] + t[i : j + 1][::-1] + t[j + 1 :]
                    new_len = _tour_length(r, cand, dist)
                    new_max = max(new_len, *(lengths[q] for q in range(n_robots) if q != r)) \
                        if n_robots > 1 else new_len
                    if new_max < cur_max - 1e-12:
                        tours[r] = cand
                        lengths[r] = new_len
                        cur_max = new_max
                        improved = True
                        if trace is not None:
                            trace.append(cur_max)
                        t = cand
        # relocate one viewpoint to any position of any other tour
        for r in range(n_robots):
            for pos in range(len(tours[r])):
                v = tours[r][pos]
                for r2 in range(n_robots):
                    if r2 == r:
                        continue
                    for pos2 in range(len(tours[r2]) + 1):
                        src = tours[r][:pos] + tours[r][pos + 1 :]
                        dst = tours[r2][:pos2] + [v] + tours[r2][pos2:]
                        new_r = _tour_length(r, src, dist)
                        new_r2 = _tour_length(r2, dst, dist)
                        new_max = max(
                            [new_r, new_r2]
                            + [lengths[q] for q in range(n_robots) if q not in (r, r2)]
                        )
                        if new_max < cur_max - 1e-12:
                            tours[r], tours[r2] = src, dst
                            lengths[r], lengths[r2] = new_r, new_r2
                            cur_max = new_max
                            improved = True
                            if trace is not None:
                                trace.append(cur_max)
                            break
                    else:
                        continue
                    break
                if improved:
                    break
            if improved:
                break
        if improved:
            continue
        # swap a pair of viewpoints across tours
        for r in range(n_robots):
            for r2 in range(r + 1, n_robots):
                for i in range(len(tours[r])):
                    for j in range(len(tours[r2])):
                        a = tours[r][:]
                        b = tours[r2][:]
                        a[i], b[j] = b[j], a[i]
                        new_r = _tour_length(r, a, dist)
                        new_r2 = _tour_length(r2, b, dist)
                        new_max = max(
                            [new_r, new_r2]
                            + [lengths[q] for q in range(n_robots) if q not in (r, r2)]
                        )
                        if new_max < cur_max - 1e-12:
                            tours[r], tours[r2] = a, b
                            lengths[r], lengths[r2] = new_r, new_r2
                            cur_max = new_max
                            improved = True
                            if trace is not None:
                                trace.append(cur_max)
    return tours


def solve_mtsp(n_robots: int, viewpoint_count: int, dist: np.ndarray,
               trace=None) -> TourPlan:
    """Open MinMax tours over viewpoints.

    `dist` is the (n_robots + viewpoint_count) square matrix with robots
    first.  Viewpoints unreachable from every robot are dropped with a
    warning.  Small instances are solved exactly; larger ones by greedy
    insertion plus strict-improvement local search.
    """
    ids = []
    for v in range(viewpoint_count):
        col = n_robots + v
        if np.isfinite(dist[:n_robots, col]).any():
            ids.append(col)
        else:
            warnings.warn(f"viewpoint {v} unreachable from every robot; dropped")
    if not ids:
        plan = TourPlan(tours=[[] for _ in range(n_robots)])
        plan.lengths = [0.0] * n_robots
        return plan
    if len(ids) <= EXACT_VIEWPOINT_LIMIT and n_robots <= EXACT_ROBOT_LIMIT:
        tours = _solve_exact(n_robots, ids, dist)
    else:
        tours = [[] for _ in range(n_robots)]
        lengths = [0.0] * n_robots
        remaining = ids[:]
        while remaining:
            best = None
            for v in remaining:
                for r in range(n_robots):
                    for pos in range(len(tours[r]) + 1):
                        cand = tours[r][:pos] + [v] + tours[r][pos:]
                        new_len = _tour_length(r, cand, dist)
                        new_max = max([new_len] + [lengths[q] for q in range(n_robots) if q != r])
                        key = (new_max, new_len, r, pos, v)
                        if best is None or key < best:
                            best = key
            _, new_len, r, pos, v = best
            tours[r] = tours[r][:pos] + [v] + tours[r][pos:]
            lengths[r] = new_len
            remaining.remove(v)
        tours = _local_search(tours, dist, n_robots, trace)
    lengths = _plan_lengths(tours, dist, n_robots)
    plan = TourPlan(
        tours=[[c - n_robots for c in t] for t in tours],
        max_length=max(lengths) if lengths else 0.0,
        lengths=lengths,
    )
    return plan


# --- per-step policies -------------------------------------------------------------


def nav_lattice(merged_belief: BeliefMap, geometry: GeometryConfig):
    """Lattice vertices and adjacency over believed-free space (no utilities)."""
    coords = _lattice_vertices(merged_belief.cells, merged_belief.resolution,
                               geometry.spacing_m)
    blocked = np.ascontiguousarray(merged_belief.cells != FREE)
    neighbors = _collision_free_adjacency(
        coords, blocked, merged_belief.resolution,
        geometry.neighbor_radius_m, geometry.max_neighbors,
    )
    return coords, neighbors


def lattice_dijkstra(coords, neighbors, sources):
    """Shortest paths over the navigation lattice itself (hop-length weights).

    Returns (dist (S, V), predecessors (S, V)); planning on the same graph
    the robots travel keeps hop sequences consistent and free of greedy
    oscillation."""
    n = coords.shape[0]
    rows, cols, data = [], [], []
    for i, nbrs in enumerate(neighbors):
        for j in nbrs:
            rows.append(i)
            cols.append(int(j))
            data.append(float(np.hypot(*(coords[i] - coords[j]))))
    g = coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    dist, pred = dijkstra(g, directed=False, indices=sources,
                          return_predecessors=True)
    return dist, pred


def _first_hop(pred_row, src: int, dst: int):
    """Next vertex after src on the recorded shortest path src -> dst."""
    cur = dst
    while True:
        prev = int(pred_row[cur])
        if prev < 0:
            return None  # unreachable
        if prev == src:
            return cur
        cur = prev


def _vertex_of(coords, pose) -> int:
    d = np.hypot(coords[:, 0] - pose[0], coords[:, 1] - pose[1])
    return int(np.argmin(d))


def _frontier_chase_hop(coords, neighbors, pose, belief: BeliefMap):
    """Commit to the lattice vertex closest to any frontier and take the
    first hop of the lattice-shortest path toward it; None holds."""
    fr = frontiers(belief)
    if fr.shape[0] == 0 or coords.shape[0] == 0:
        return None
    res = belief.resolution
    field = nearest_field(belief.free_mask(), res, [tuple(f) for f in fr])
    phi = field[(coords[:, 1] / res).astype(int), (coords[:, 0] / res).astype(int)]
    if not np.isfinite(phi).any():
        return None
    target = int(np.argmin(np.where(np.isfinite(phi), phi, np.inf)))
    cur = _vertex_of(coords, pose)
    if target == cur:
        return None
    _, pred = lattice_dijkstra(coords, neighbors, [cur])
    nxt = _first_hop(pred[0], cur, target)
    if nxt is None:
        return None
    return (float(coords[nxt, 0]), float(coords[nxt, 1]))


def mtsp_step(merged_belief: BeliefMap, robot_positions, geometry: GeometryConfig,
              min_gain: int = 3):
    """Replan and return one waypoint per robot, or None when exploration is
    complete (no frontiers remain).

    Viewpoints are assigned by the MinMax solver over lattice distances and
    every robot advances one lattice hop along its shortest path; robots
    without an assignment chase the nearest frontier.
    """
    fr = frontiers(merged_belief)
    if fr.shape[0] == 0:
        return None
    coords, neighbors = nav_lattice(merged_belief, geometry)
    if coords.shape[0] == 0:
        return None
    vps = sample_viewpoints(merged_belief, geometry.sensor_range_m, min_gain,
                            geometry.spacing_m)
    n = len(robot_positions)
    robot_vertices = [_vertex_of(coords, p) for p in robot_positions]
    waypoints: list = [None] * n
    assigned = [None] * n
    if vps.count > 0:
        vp_vertices = [_vertex_of(coords, p) for p in vps.points]
        sources = robot_vertices + vp_vertices
        dist_rows, pred_rows = lattice_dijkstra(coords, neighbors, sources)
        pts = len(sources)
        dist = np.empty((pts, pts))
        for i in range(pts):
            dist[i] = dist_rows[i, sources]
        dist = np.minimum(dist, dist.T)
        plan = solve_mtsp(n, vps.count, dist)
        for r, tour in enumerate(plan.tours):
            if tour:
                assigned[r] = vp_vertices[tour[0]]
                nxt = _first_hop(pred_rows[r], robot_vertices[r], assigned[r])
                if nxt is not None:
                    waypoints[r] = (float(coords[nxt, 0]), float(coords[nxt, 1]))
    for r, pose in enumerate(robot_positions):
        if waypoints[r] is None:
            waypoints[r] = _frontier_chase_hop(coords, neighbors, pose, merged_belief)
    return waypoints


def random_policy(obs_graph: InformativeGraph, rng: np.random.Generator) -> int:
    """Uniform choice among the current vertex's navigable neighbors."""
    targets = obs_graph.action_targets()
    if targets.size == 0:
        raise ValueError("no navigable neighbor to choose from")
    return int(targets[rng.integers(0, targets.size)])


def nearest_frontier_policy(belief: BeliefMap, pose, geometry: GeometryConfig):
    """One lattice hop toward the closest frontier; None means hold."""
    coords, neighbors = nav_lattice(belief, geometry)
    if coords.shape[0] == 0:
        return None
    return _frontier_chase_hop(coords, neighbors, pose, belief)
