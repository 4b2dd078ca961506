import csv

import numpy as np
import pytest
import torch

from bandex import cli, harness, world
from bandex.comms import POSE_BYTES
from bandex.config import GeometryConfig, parse_config_text
from bandex.policy_net import NetConfig, PolicyNetwork

TOY_GEO = GeometryConfig(resolution_m=0.25, sensor_range_m=6.0, spacing_m=3.0,
                         neighbor_radius_m=9.0, max_neighbors=24)


@pytest.fixture(scope="module")
def toy_maps():
    return [
        world.generate_dungeon(world.DungeonConfig(
            map_size_m=24.0, room_count_range=(3, 5), seed=100 + i,
            corridor_width_m=3.5))
        for i in range(2)
    ]


@pytest.fixture(scope="module")
def toy_policy():
    torch.manual_seed(7)
    return PolicyNetwork(NetConfig(d=16, encoder_layers=2))


class TestRunConfig:
    def test_theta_bounds_enforced(self):
        with pytest.raises(ValueError):
            harness.RunConfig(mode="random", theta=0.5)
        with pytest.raises(ValueError):
            harness.RunConfig(mode="not_a_mode")

    def test_learned_mode_requires_policy(self, toy_maps):
        cfg = harness.RunConfig(mode="ours", n_robots=2, theta=0.9, geometry=TOY_GEO)
        with pytest.raises(ValueError):
            harness.run_episode(cfg, toy_maps[0], policy=None)


class TestRunEpisode:
    def test_terminates_at_theta(self, toy_maps):
        cfg = harness.RunConfig(mode="nearest_frontier", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=1)
        res = harness.run_episode(cfg, toy_maps[0])
        assert res.exploration_rate >= 0.9
        assert not res.aborted
        assert res.makespan == max(res.trajectory_lengths)
        assert res.makespan >= min(res.trajectory_lengths)

    def test_ours_ledger_carries_only_pose_and_message_bytes(self, toy_maps, toy_policy):
        cfg = harness.RunConfig(mode="ours", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=2)
        res = harness.run_episode(cfg, toy_maps[0], policy=toy_policy)
        payload = POSE_BYTES + 4 * toy_policy.cfg.d
        for uv in res.upload_bytes:
            assert uv == res.steps * payload  # no belief-map payload ever
        for dv in res.download_bytes:
            assert dv == res.steps * payload * (cfg.n_robots - 1)

    def test_map_sharing_ledger_includes_full_maps(self, toy_maps):
        cfg = harness.RunConfig(mode="mtsp_based", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=3)
        grid = toy_maps[0]
        res = harness.run_episode(cfg, grid)
        cells = grid.width_cells * grid.height_cells
        assert res.upload_bytes[0] == res.steps * (POSE_BYTES + cells)

    def test_fixed_seed_reproducible(self, toy_maps, toy_policy):
        cfg = harness.RunConfig(mode="ours", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=5)
        a = harness.run_episode(cfg, toy_maps[0], policy=toy_policy)
        b = harness.run_episode(cfg, toy_maps[0], policy=toy_policy)
        assert a.makespan == b.makespan
        assert a.trajectories == b.trajectories
        assert a.upload_bytes == b.upload_bytes

    def test_global_map_mode_runs(self, toy_maps, toy_policy):
        cfg = harness.RunConfig(mode="global_map", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=4)
        res = harness.run_episode(cfg, toy_maps[0], policy=toy_policy)
        assert res.steps > 0
        cells = toy_maps[0].width_cells * toy_maps[0].height_cells
        payload = POSE_BYTES + cells + 4 * toy_policy.cfg.d
        assert res.upload_bytes[0] == res.steps * payload


class TestEvaluate:
    def test_single_map_zero_std(self, toy_maps):
        cfg = harness.RunConfig(mode="random", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=1)
        rows, summary = harness.evaluate(cfg, toy_maps[:1])
        assert summary.std_makespan == 0.0
        assert len(rows) == 1

    def test_mean_over_two_maps(self, toy_maps):
        cfg = harness.RunConfig(mode="nearest_frontier", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=1)
        rows, summary = harness.evaluate(cfg, toy_maps)
        d = [float(r["D_m"]) for r in rows]
        assert summary.mean_makespan == pytest.approx(np.mean(d))
        assert summary.std_makespan == pytest.approx(np.std(d))

    def test_compare_emits_row_per_mode_and_map(self, toy_maps):
        configs = [
            harness.RunConfig(mode=m, n_robots=2, theta=0.9, geometry=TOY_GEO, seed=1)
            for m in ("random", "nearest_frontier")
        ]
        rows, summaries = harness.compare(configs, toy_maps, policies={})
        assert len(rows) == 4
        assert {(r["mode"], r["map_id"]) for r in rows} == {
            (m, i) for m in ("random", "nearest_frontier") for i in range(2)
        }
        assert [s.mode for s in summaries] == ["random", "nearest_frontier"]

    def test_eval_csv_schema(self, toy_maps, tmp_path):
        cfg = harness.RunConfig(mode="random", n_robots=2, theta=0.9,
                                geometry=TOY_GEO, seed=1)
        rows, _ = harness.evaluate(cfg, toy_maps[:1])
        path = tmp_path / "eval.csv"
        harness.write_eval_csv(path, rows)
        with open(path) as f:
            reader = csv.DictReader(f)
            assert reader.fieldnames == harness.EVAL_FIELDS
            row = next(reader)
        assert row["mode"] == "random"
        assert float(row["rate"]) >= 0.9


class TestConfigFile:
    def test_parse_key_value_with_comments(self):
        text = "# training setup\nn_robots = 4\ntheta=0.95  # threshold\n\nd=64\n"
        values = parse_config_text(text)
        assert values == {"n_robots": "4", "theta": "0.95", "d": "64"}

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("just a line\n")


class TestCli:
    def test_genmaps_deterministic(self, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        for out in (out1, out2):
            code = cli.main(["genmaps", "--count", "2", "--size", "16", "--seed", "3",
                             "--rooms", "2,3", "--out", str(out), "--no-figures"])
            assert code == 0
        for name in ("map_000.txt", "map_001.txt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_eval_mtsp_needs_no_checkpoint(self, tmp_path):
        maps_dir = tmp_path / "maps"
        cli.main(["genmaps", "--count", "1", "--size", "16", "--seed", "2",
                  "--rooms", "2,3", "--out", str(maps_dir), "--no-figures"])
        code = cli.main(["eval", "--mode", "mtsp_based", "--maps", str(maps_dir),
                         "--n", "2", "--theta", "0.9", "--sensor-range", "6",
                         "--spacing", "3", "--neighbor-radius", "9",
                         "--out", str(tmp_path / "out"), "--no-figures"])
        assert code == 0
        assert (tmp_path / "out" / "eval.csv").exists()
        assert (tmp_path / "out" / "summary.csv").exists()

    def test_compare_rows_per_mode_map(self, tmp_path):
        maps_dir = tmp_path / "maps"
        cli.main(["genmaps", "--count", "2", "--size", "16", "--seed", "5",
                  "--rooms", "2,3", "--out", str(maps_dir), "--no-figures"])
        code = cli.main(["compare", "--modes", "random,nearest_frontier",
                         "--maps", str(maps_dir), "--n", "2", "--theta", "0.9",
                         "--sensor-range", "6", "--spacing", "3",
                         "--neighbor-radius", "9",
                         "--out", str(tmp_path / "cmp"), "--no-figures"])
        assert code == 0
        with open(tmp_path / "cmp" / "compare.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 4
        assert {(r["mode"], r["map_id"]) for r in rows} == {
            (m, f"map_{i:03d}") for m in ("random", "nearest_frontier")
            for i in range(2)
        }

    def test_unknown_mode_exits_nonzero(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["eval", "--mode", "bogus", "--maps", str(tmp_path)])
        assert exc.value.code == 2

    def test_missing_maps_dir_diagnostic(self, tmp_path, capsys):
        code = cli.main(["eval", "--mode", "random", "--maps",
                         str(tmp_path / "nothing"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_figures_rendered_by_default(self, tmp_path):
        out = tmp_path / "figs"
        cli.main(["genmaps", "--count", "1", "--size", "16", "--seed", "3",
                  "--rooms", "2,3", "--out", str(out)])
        assert (out / "map_000.png").exists()
