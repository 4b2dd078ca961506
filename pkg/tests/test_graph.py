import numpy as np
import pytest

from bandex import belief, graph, world

from conftest import open_room_map
from oracles import segment_blocked


def known_belief(grid) -> belief.BeliefMap:
    return belief.BeliefMap(cells=grid.cells.copy(), resolution=grid.resolution)


def first_free_vertex_pose(b: belief.BeliefMap, spacing: float):
    coords = graph._lattice_vertices(b.cells, b.resolution, spacing)
    return tuple(coords[0])


class TestBuildGraph:
    def test_neighbor_cap_default_geometry(self, toy_dungeon):
        # lattice spacing 4 m with strict 12 m radius admits at most 24
        # neighbors per vertex
        b = known_belief(toy_dungeon)
        pose = first_free_vertex_pose(b, 4.0)
        g = graph.build_graph(b, pose, [], [], spacing_m=4.0, neighbor_radius_m=12.0,
                              max_neighbors=24, sensor_range_m=20.0)
        assert max(len(n) for n in g.neighbors) <= 24

    def test_single_robot_occupancy(self):
        grid = open_room_map(16, resolution=1.0)
        b = known_belief(grid)
        pose = first_free_vertex_pose(b, 3.0)
        g = graph.build_graph(b, pose, [], [], 3.0, 9.0, 24, 5.0)
        assert int(np.count_nonzero(g.occupancy == -1)) == 1
        assert int(np.count_nonzero(g.occupancy == 1)) == 0
        assert g.occupancy[g.current_index] == -1

    def test_wall_blocks_edge(self):
        # two free chambers separated by a wall with no gap: vertices across
        # the wall are within radius but must not be connected
        cells = np.full((9, 17), world.OCCUPIED, dtype=np.uint8)
        cells[1:-1, 1:8] = world.FREE
        cells[1:-1, 9:-1] = world.FREE
        grid = world.GridMap(cells=cells, resolution=1.0)
        b = known_belief(grid)
        g = graph.build_graph(b, (4.5, 4.5), [], [], 2.0, 6.0, 24, 5.0)
        blocked_mask = b.cells != world.FREE
        for i, nbrs in enumerate(g.neighbors):
            for j in nbrs:
                assert not segment_blocked(tuple(g.coords[i]), tuple(g.coords[j]),
                                           blocked_mask, 1.0)
        left = g.coords[:, 0] < 8.0
        for i in np.nonzero(left)[0]:
            for j in g.neighbors[i]:
                assert left[j], "edge must not cross the dividing wall"

    def test_no_free_vertices_raises(self):
        grid = open_room_map(6, resolution=1.0)
        b = belief.BeliefMap.unknown_like(grid)
        with pytest.raises(graph.GraphBuildError):
            graph.build_graph(b, (2.5, 2.5), [], [], 2.0, 6.0, 24, 5.0)

    def test_guidepost_marks_visited(self):
        grid = open_room_map(16, resolution=1.0)
        b = known_belief(grid)
        coords = graph._lattice_vertices(b.cells, 1.0, 3.0)
        visited = [tuple(coords[0]), tuple(coords[3])]
        g = graph.build_graph(b, tuple(coords[0]), [], visited, 3.0, 9.0, 24, 5.0)
        flagged = set(np.nonzero(g.guidepost)[0])
        assert flagged == {0, 3}


class TestVertexUtility:
    def test_fully_explored_zero(self, small_dungeon):
        b = known_belief(small_dungeon)
        pose = first_free_vertex_pose(b, 2.0)
        assert graph.vertex_utility(pose, b, 5.0) == 0

    def test_visible_ring_counted(self):
        grid = open_room_map(15, resolution=1.0)
        pose = world.cell_center(7, 7, 1.0)
        obs = world.sense(grid, pose, world.SensorSpec(range_m=3.0))
        b = belief.update_belief(belief.BeliefMap.unknown_like(grid), obs)
        fr = belief.frontiers(b)
        assert fr.shape[0] > 0
        # an open room: every frontier is in line of sight from the center
        assert graph.vertex_utility(pose, b, 20.0) == fr.shape[0]

    def test_matches_per_frontier_raycast_oracle(self, small_dungeon):
        g = small_dungeon
        rng = np.random.default_rng(5)
        free = np.argwhere(g.free_mask())
        spec = world.SensorSpec(range_m=2.5)
        b = belief.BeliefMap.unknown_like(g)
        for k in range(5):
            r, c = free[rng.integers(0, len(free))]
            b = belief.update_belief(b, world.sense(g, world.cell_center(r, c, g.resolution), spec))
        fr = belief.frontiers(b)
        blocked = b.cells == world.OCCUPIED
        sensor_range = 3.0
        for k in range(6):
            r, c = free[rng.integers(0, len(free))]
            if b.cells[r, c] != world.FREE:
                continue
            pose = world.cell_center(r, c, g.resolution)
            expected = 0
            for fr_cell in fr:
                fx, fy = world.cell_center(fr_cell[0], fr_cell[1], g.resolution)
                if np.hypot(fx - pose[0], fy - pose[1]) > sensor_range:
                    continue
                if not segment_blocked(pose, (fx, fy), blocked, g.resolution):
                    expected += 1
            assert graph.vertex_utility(pose, b, sensor_range) == expected


class TestTempVertex:
    def _base(self):
        grid = open_room_map(20, resolution=1.0)
        b = known_belief(grid)
        pose = first_free_vertex_pose(b, 3.0)
        return graph.build_graph(b, pose, [], [], 3.0, 9.0, 24, 5.0)

    def test_covered_pose_marks_occupancy(self):
        g = self._base()
        inside = tuple(g.coords[2])
        g2 = graph.insert_temp_vertex(g, inside)
        assert g2.n_vertices == g.n_vertices
        assert g2.occupancy[2] == 1
        assert np.array_equal(g2.edge_mask, g.edge_mask)

    def test_outside_pose_appends_vertex(self):
        g = self._base()
        g2 = graph.insert_temp_vertex(g, (55.0, 55.0))
        assert g2.n_vertices == g.n_vertices + 1
        assert g2.occupancy[-1] == 1
        assert g2.utility[-1] == 0 and g2.guidepost[-1] == 0
        assert g2.is_temp[-1]
        # attention reaches the temp vertex from its nearest anchor only
        n = g.n_vertices
        anchors = np.nonzero(g2.edge_mask[n, :n] == 0)[0]
        assert len(anchors) == 1
        assert g2.edge_mask[anchors[0], n] == 0
        # not navigable
        assert all(n not in list(nbrs) for nbrs in g2.neighbors)

    def test_two_externals_leave_original_edges(self):
        g = self._base()
        g2 = graph.insert_temp_vertex(g, (55.0, 55.0))
        g3 = graph.insert_temp_vertex(g2, (-30.0, 42.0))
        assert g3.n_vertices == g.n_vertices + 2
        n = g.n_vertices
        assert np.array_equal(g3.edge_mask[:n, :n], g.edge_mask)
        assert all(np.array_equal(a, b) for a, b in zip(g3.neighbors[:n], g.neighbors))
        assert int(np.count_nonzero(g3.is_temp)) == 2


class TestGroundTruthGraph:
    def test_fully_explored_utilities_zero(self, toy_dungeon):
        b = known_belief(toy_dungeon)
        coords = graph._lattice_vertices(toy_dungeon.cells, toy_dungeon.resolution, 4.0)
        g = graph.build_ground_truth_graph(toy_dungeon, b, [tuple(coords[0])], 0, [],
                                           4.0, 12.0, 24, 20.0)
        assert np.all(g.utility == 0)

    def test_all_unknown_utility_equals_disc_count(self, toy_dungeon):
        truth = toy_dungeon
        b = belief.BeliefMap.unknown_like(truth)
        coords = graph._lattice_vertices(truth.cells, truth.resolution, 4.0)
        g = graph.build_ground_truth_graph(truth, b, [tuple(coords[0])], 0, [],
                                           4.0, 12.0, 24, 6.0)
        free = np.argwhere(truth.free_mask())
        centers = (free[:, ::-1] + 0.5) * truth.resolution
        for i in range(0, g.n_vertices, 7):
            d = np.hypot(centers[:, 0] - g.coords[i, 0], centers[:, 1] - g.coords[i, 1])
            assert g.utility[i] == int(np.count_nonzero(d <= 6.0))

    def test_superset_of_policy_graph(self, toy_dungeon):
        truth = toy_dungeon
        spec = world.SensorSpec(range_m=6.0)
        coords = graph._lattice_vertices(truth.cells, truth.resolution, 3.0)
        pose = tuple(coords[0])
        obs = world.sense(truth, pose, spec)
        b = belief.update_belief(belief.BeliefMap.unknown_like(truth), obs)
        pg = graph.build_graph(b, pose, [], [], 3.0, 9.0, 24, 6.0)
        gt = graph.build_ground_truth_graph(truth, b, [pose], 0, [], 3.0, 9.0, 24, 6.0)
        assert gt.n_vertices >= pg.n_vertices
        pg_set = {(round(x, 6), round(y, 6)) for x, y in pg.coords}
        gt_set = {(round(x, 6), round(y, 6)) for x, y in gt.coords}
        assert pg_set <= gt_set

    def test_occupancy_marks_all_robots(self, toy_dungeon):
        truth = toy_dungeon
        b = known_belief(truth)
        coords = graph._lattice_vertices(truth.cells, truth.resolution, 4.0)
        poses = [tuple(coords[0]), tuple(coords[5]), tuple(coords[9])]
        g = graph.build_ground_truth_graph(truth, b, poses, 1, [], 4.0, 12.0, 24, 20.0)
        assert g.occupancy[g.current_index] == -1
        assert int(np.count_nonzero(g.occupancy == 1)) == 2


class TestGraphInvariants:
    def _graphs(self, toy_dungeon):
        truth = toy_dungeon
        spec = world.SensorSpec(range_m=7.0)
        coords = graph._lattice_vertices(truth.cells, truth.resolution, 3.0)
        pose = tuple(coords[len(coords) // 2])
        obs = world.sense(truth, pose, spec)
        b = belief.update_belief(belief.BeliefMap.unknown_like(truth), obs)
        pg = graph.build_graph(b, pose, [], [], 3.0, 9.0, 24, 7.0)
        pg2 = graph.insert_temp_vertex(pg, (truth.width_m + 5.0, 1.0))
        return b, pg, pg2

    def test_mask_edge_duality(self, toy_dungeon):
        _, pg, pg2 = self._graphs(toy_dungeon)
        for g in (pg, pg2):
            n = g.n_vertices
            temp_edges = set()
            for t in np.nonzero(g.is_temp)[0]:
                anchors = [j for j in range(n)
                           if g.edge_mask[t, j] == 0 and j != t]
                for j in anchors:
                    temp_edges.add((int(t), j))
                    temp_edges.add((j, int(t)))
            for i in range(n):
                nav = set(int(j) for j in g.neighbors[i])
                for j in range(n):
                    attended = g.edge_mask[i, j] == 0
                    expected = (i == j) or (j in nav) or ((i, j) in temp_edges)
                    assert attended == expected, (i, j)

    def test_adjacency_symmetric(self, toy_dungeon):
        _, pg, _ = self._graphs(toy_dungeon)
        for i, nbrs in enumerate(pg.neighbors):
            for j in nbrs:
                assert i in pg.neighbors[j]
        assert np.array_equal(pg.edge_mask, pg.edge_mask.T)

    def test_edges_collision_free(self, toy_dungeon):
        b, pg, _ = self._graphs(toy_dungeon)
        blocked = b.cells != world.FREE  # unknown blocks navigation edges too
        for i, nbrs in enumerate(pg.neighbors):
            for j in nbrs:
                assert not segment_blocked(tuple(pg.coords[i]), tuple(pg.coords[j]),
                                           blocked, b.resolution)

    def test_every_vertex_has_self_edge(self, toy_dungeon):
        _, pg, pg2 = self._graphs(toy_dungeon)
        for g in (pg, pg2):
            assert np.all(np.diag(g.edge_mask) == 0)

    def test_dump_format(self, toy_dungeon):
        _, pg, _ = self._graphs(toy_dungeon)
        text = graph.graph_to_text(pg)
        lines = text.strip().splitlines()
        v_lines = [l for l in lines if l.startswith("V ")]
        e_lines = [l for l in lines if l.startswith("E ")]
        assert len(v_lines) == pg.n_vertices
        assert len(e_lines) == sum(len(n) for n in pg.neighbors) // 2
        assert len(v_lines[0].split()) == 6
