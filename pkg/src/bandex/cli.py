"""Command-line entry point.

Subcommands: genmaps (write map files), train (run SAC training from a
key=value config), eval (run one mode over a map set), compare (several modes
on one set).  Reports are CSV files with PNG figures rendered alongside.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from . import harness, learner, plotting, world
from .config import GeometryConfig, load_config_file, coerce_into


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering, write CSV only")


def _cmd_genmaps(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    rooms = tuple(int(x) for x in args.rooms.split(","))
    for i in range(args.count):
        cfg = world.DungeonConfig(
            map_size_m=args.size, room_count_range=rooms,
            corridor_width_m=args.corridor, seed=args.seed + i,
            resolution_m=args.resolution,
        )
        grid = world.generate_dungeon(cfg)
        path = args.out / f"map_{i:03d}.txt"
        world.save_map(grid, path)
        if not args.no_figures:
            plotting.plot_grid(grid.cells, grid.resolution,
                               args.out / f"map_{i:03d}.png", title=path.name)
        print(f"wrote {path} (free fraction {grid.free_fraction():.3f})")
    return 0


def _cmd_train(args) -> int:
    cfg = learner.TrainConfig()
    if args.config:
        cfg = coerce_into(cfg, load_config_file(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "train_config.txt", "w") as f:
        for field in dataclasses.fields(cfg):
            f.write(f"{field.name}={getattr(cfg, field.name)}\n")

    def progress(episode, stats, report):
        if episode % max(1, cfg.episodes // 50) == 0 or episode == cfg.episodes:
            print(f"episode {episode}/{cfg.episodes}: steps={stats.steps} "
                  f"rate={stats.explored_rate:.3f} makespan={stats.makespan:.1f} "
                  f"alpha={report.get('alpha', float('nan')):.4f}", flush=True)

    summary = learner.train(cfg, args.out, progress=progress)
    print(f"trained {summary['episodes']} episodes, {summary['updates']} updates "
          f"in {summary['wall_time_s']:.0f}s -> {summary['checkpoint']}")
    if not args.no_figures:
        plotting.plot_training_curves(summary["curve"], args.out / "training_curve.png")
    return 0


def _load_maps(maps_dir: Path):
    paths = sorted(Path(maps_dir).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no map files (*.txt) under {maps_dir}")
    return [world.load_map(p) for p in paths], [p.stem for p in paths]


def _geometry_from_args(args) -> GeometryConfig:
    return GeometryConfig(
        sensor_range_m=args.sensor_range, spacing_m=args.spacing,
        neighbor_radius_m=args.neighbor_radius,
    )


def _run_eval(args, modes: list[str]) -> int:
    maps, ids = _load_maps(args.maps)
    geometry = dataclasses.replace(_geometry_from_args(args),
                                   resolution_m=maps[0].resolution)
    policies = {}
    for mode in modes:
        if mode in harness.LEARNED_MODES:
            if not args.checkpoint:
                raise ValueError(f"mode {mode} requires --checkpoint")
            from .policy_net import load_checkpoint

            policies[mode], _ = load_checkpoint(args.checkpoint)
    configs = [
        harness.RunConfig(mode=mode, n_robots=args.n, theta=args.theta,
                          seed=args.seed, geometry=geometry)
        for mode in modes
    ]
    args.out.mkdir(parents=True, exist_ok=True)
    rows, summaries = harness.compare(configs, maps, policies, map_ids=ids)
    csv_path = args.out / ("compare.csv" if len(modes) > 1 else "eval.csv")
    harness.write_eval_csv(csv_path, rows)
    summary_path = args.out / "summary.csv"
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "n_maps", "D_mean", "D_std", "UV_mean", "DV_mean",
                         "T_mean", "completion_rate"])
        for s in summaries:
            writer.writerow([s.mode, s.n_maps, f"{s.mean_makespan:.3f}",
                             f"{s.std_makespan:.3f}", f"{s.mean_uv:.1f}",
                             f"{s.mean_dv:.1f}", f"{s.mean_time:.3f}",
                             f"{s.completion_rate:.3f}"])
    for s in summaries:
        print(f"{s.mode}: D = {s.mean_makespan:.1f} +/- {s.std_makespan:.1f} m, "
              f"UV = {s.mean_uv:.0f} B, DV = {s.mean_dv:.0f} B, "
              f"completed {s.completion_rate:.0%}")
    if not args.no_figures:
        plotting.plot_mode_comparison(summaries, args.out / "comparison.png")
        # render the first map's trajectories per mode as a qualitative check
        for cfg in configs:
            result = harness.run_episode(cfg, maps[0], policies.get(cfg.mode),
                                         map_id=0)
            plotting.plot_episode(maps[0].cells, maps[0].resolution,
                                  result.trajectories,
                                  args.out / f"episode_{cfg.mode}_{ids[0]}.png",
                                  title=f"{cfg.mode} on {ids[0]}")
    print(f"wrote {csv_path} and {summary_path}")
    return 0


def _cmd_eval(args) -> int:
    return _run_eval(args, [args.mode])


def _cmd_compare(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    return _run_eval(args, modes)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandex",
                                     description="bandwidth-limited multi-robot "
                                                 "exploration workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmaps", help="generate dungeon map files")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=float, default=100.0, help="map side [m]")
    p.add_argument("--rooms", default="8,15", help="room count range lo,hi")
    p.add_argument("--corridor", type=float, default=4.5,
                   help="corridor width [m]; keep wider than the lattice spacing")
    p.add_argument("--resolution", type=float, default=0.25)
    _add_common(p)
    p.set_defaults(func=_cmd_genmaps)

    p = sub.add_parser("train", help="train the message-based policy")
    p.add_argument("--config", type=Path, default=None,
                   help="key=value training config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("out/train"))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_train)

    for name in ("eval", "compare"):
        p = sub.add_parser(name, help=f"{name} mode(s) on a map set")
        if name == "eval":
            p.add_argument("--mode", required=True, choices=harness.MODES)
        else:
            p.add_argument("--modes", required=True,
                           help="comma-separated list, e.g. ours,mtsp_based")
        p.add_argument("--maps", type=Path, required=True, help="directory of map .txt files")
        p.add_argument("--n", type=int, default=4, help="robots")
        p.add_argument("--theta", type=float, default=0.95)
        p.add_argument("--checkpoint", type=Path, default=None)
        p.add_argument("--sensor-range", type=float, default=20.0)
        p.add_argument("--spacing", type=float, default=4.0)
        p.add_argument("--neighbor-radius", type=float, default=12.0)
        _add_common(p)
        p.set_defaults(func=_cmd_eval if name == "eval" else _cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, world.MapGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
