"""Multi-robot exploration simulation state shared by training and evaluation.

One ExplorationSim owns the ground-truth map, the per-robot beliefs, poses,
visited sets and trajectories.  Robots move one lattice hop per decision step;
an omniscient merge of all beliefs decides termination regardless of what the
robots themselves can see.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import belief as bel
from . import comms, graph, world
from .config import GeometryConfig, disc_cell_count


@dataclass
class RobotState:
    pose: tuple[float, float]
    belief: bel.BeliefMap
    visited: list = field(default_factory=list)  # waypoints (x, y)
    trajectory: list = field(default_factory=list)
    distance: float = 0.0
    move_dir: np.ndarray = None  # unit vector of the last hop, zero initially

    def __post_init__(self):
        if self.move_dir is None:
            self.move_dir = np.zeros(2)


def lattice_start_poses(grid: world.GridMap, n_robots: int, spacing_m: float, rng) -> list:
    """Distinct free lattice cell centers; free space is connected by
    construction, so any picks are mutually reachable."""
    coords = graph._lattice_vertices(grid.cells, grid.resolution, spacing_m)
    if coords.shape[0] < n_robots:
        raise ValueError("not enough free lattice sites for the team")
    picks = rng.choice(coords.shape[0], size=n_robots, replace=False)
    return [(float(coords[i, 0]), float(coords[i, 1])) for i in picks]


class ExplorationSim:
    def __init__(self, grid: world.GridMap, n_robots: int, geometry: GeometryConfig,
                 start_poses=None, rng=None, step_cap_factor: float = 4.0):
        self.grid = grid
        self.geometry = geometry
        self.n_robots = n_robots
        self.sensor = world.SensorSpec(range_m=geometry.sensor_range_m)
        rng = rng if rng is not None else np.random.default_rng(0)
        poses = start_poses or lattice_start_poses(grid, n_robots, geometry.spacing_m, rng)
        self.robots = [
            RobotState(pose=p, belief=bel.BeliefMap.unknown_like(grid), visited=[p],
                       trajectory=[p])
            for p in poses
        ]
        free_cells = int(np.count_nonzero(grid.cells == world.FREE))
        disc = disc_cell_count(geometry.sensor_range_m, grid.resolution)
        free_area = free_cells * grid.resolution**2
        # the disc-ratio bound collapses when the sensor spans the map, so a
        # sweep-length bound (area / sensor swath, in hops) backs it up
        self.step_cap = max(
            32,
            int(np.ceil(step_cap_factor * free_cells / disc)),
            int(np.ceil(2 * step_cap_factor * free_area
                        / (geometry.sensor_range_m * geometry.spacing_m))),
        )
        self.steps_taken = 0
        self._path_sensor = world.SensorSpec(
            range_m=min(geometry.sensor_range_m, 2.0 * geometry.spacing_m))
        for r in self.robots:
            self._sense(r)

    def _sense(self, robot: RobotState) -> None:
        obs = world.sense(self.grid, robot.pose, self.sensor)
        robot.belief = bel.update_belief(robot.belief, obs)

    def _sense_along(self, robot: RobotState, start, end) -> None:
        """Short-range measurements at every cell crossed by one hop; narrow
        passages are only visible from points between waypoints."""
        res = self.grid.resolution
        length = float(np.hypot(end[0] - start[0], end[1] - start[1]))
        if length == 0.0:
            return
        n = int(np.ceil(length / (res / 2.0)))
        ts = np.linspace(0.0, 1.0, n + 1)[1:-1]
        seen_cells = {self.grid.cell_of(*start), self.grid.cell_of(*end)}
        for t in ts:
            p = (start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1]))
            cell = self.grid.cell_of(*p)
            if cell in seen_cells:
                continue
            seen_cells.add(cell)
            center = world.cell_center(cell[0], cell[1], res)
            obs = world.sense(self.grid, center, self._path_sensor)
            robot.belief = bel.update_belief(robot.belief, obs)

    def merged_belief(self) -> bel.BeliefMap:
        return bel.merge([r.belief for r in self.robots])

    def exploration_rate(self) -> float:
        return bel.exploration_rate(self.merged_belief(), self.grid)

    def poses(self) -> list:
        return [r.pose for r in self.robots]

    def adopt_merged_beliefs(self) -> None:
        """Map-sharing regimes: every robot's belief becomes the merged one."""
        merged = self.merged_belief()
        for r in self.robots:
            r.belief = merged

    def observation_graph(self, robot_index: int, use_merged: bool = False
                          ) -> graph.InformativeGraph:
        """Build one robot's observation graph, inserting temporary vertices
        for peers outside its explored area."""
        g = self.geometry
        robot = self.robots[robot_index]
        source = self.merged_belief() if use_merged else robot.belief
        other_poses = [r.pose for i, r in enumerate(self.robots) if i != robot_index]
        og = graph.build_graph(
            source, robot.pose, other_poses, robot.visited,
            spacing_m=g.spacing_m, neighbor_radius_m=g.neighbor_radius_m,
            max_neighbors=g.max_neighbors, sensor_range_m=g.sensor_range_m,
        )
        for pose in other_poses:
            og = graph.insert_temp_vertex(og, pose)
        return og

    def ground_truth_graph(self, robot_index: int,
                           merged: bel.BeliefMap | None = None) -> graph.InformativeGraph:
        g = self.geometry
        return graph.build_ground_truth_graph(
            self.grid, merged if merged is not None else self.merged_belief(),
            self.poses(), robot_index, self.robots[robot_index].visited,
            spacing_m=g.spacing_m, neighbor_radius_m=g.neighbor_radius_m,
            max_neighbors=g.max_neighbors, sensor_range_m=g.sensor_range_m,
        )

    def move(self, robot_index: int, target_xy) -> float:
        """Execute one hop, sensing along the way; returns the hop length."""
        robot = self.robots[robot_index]
        start = robot.pose
        hop = float(np.hypot(target_xy[0] - start[0], target_xy[1] - start[1]))
        robot.pose = (float(target_xy[0]), float(target_xy[1]))
        robot.distance += hop
        robot.trajectory.append(robot.pose)
        robot.visited.append(robot.pose)
        self._sense_along(robot, start, robot.pose)
        self._sense(robot)
        return hop

    def share_poses(self, ledger: comms.BandwidthLedger, step: int) -> None:
        packets = [
            comms.WirePacket(i, step, comms.PayloadKind.POSE, comms.encode_pose(*r.pose))
            for i, r in enumerate(self.robots)
        ]
        _, delta = comms.broadcast(packets, self.n_robots)
        ledger.apply(delta, step)

    def share_beliefs(self, ledger: comms.BandwidthLedger, step: int) -> None:
        packets = [
            comms.WirePacket(i, step, comms.PayloadKind.BELIEF_MAP,
                             comms.encode_belief(r.belief))
            for i, r in enumerate(self.robots)
        ]
        _, delta = comms.broadcast(packets, self.n_robots)
        ledger.apply(delta, step)
        self.adopt_merged_beliefs()

    def share_messages(self, messages: list[np.ndarray], ledger: comms.BandwidthLedger,
                       step: int) -> list[list[np.ndarray]]:
        """Broadcast learned messages; returns each robot's received vectors
        ordered by sender id."""
        packets = [
            comms.WirePacket(i, step, comms.PayloadKind.LEARNED_MSG,
                             comms.encode_learned(m))
            for i, m in enumerate(messages)
        ]
        inboxes, delta = comms.broadcast(packets, self.n_robots)
        ledger.apply(delta, step)
        return [[comms.decode_learned(p.payload) for p in box] for box in inboxes]
