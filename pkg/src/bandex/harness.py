"""Experiment orchestration: episode loop for every mode, evaluation metrics
and their CSV schemas.

All modes advance one lattice hop per decision step and are terminated by an
omniscient merge of the robots' beliefs reaching the threshold theta, so the
distance metrics are comparable across regimes.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import baselines, world
from .comms import BandwidthLedger
from .config import GeometryConfig
from .policy_net import PolicyNetwork, pointer_policy, policy_message
from .sim import ExplorationSim

MODES = ("ours", "global_map", "mtsp_based", "nearest_frontier", "random")
LEARNED_MODES = ("ours", "global_map")

EVAL_FIELDS = ["mode", "map_id", "n_robots", "theta", "D_m", "UV_bytes", "DV_bytes",
               "T_s", "steps", "rate"]


@dataclass(frozen=True)
class RunConfig:
    mode: str
    n_robots: int = 4
    theta: float = 0.95
    seed: int = 0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    step_cap_factor: float = 4.0
    viewpoint_min_gain: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not 0.9 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.9, 1]")
        if self.n_robots < 1:
            raise ValueError("n_robots must be positive")


@dataclass
class EpisodeResult:
    mode: str
    trajectory_lengths: list
    makespan: float
    steps: int
    exploration_rate: float
    upload_bytes: list
    download_bytes: list
    planning_time_s: float
    aborted: bool
    trajectories: list  # per robot list of waypoints


def _learned_actions(sim: ExplorationSim, policy: PolicyNetwork, ledger, step, rng,
                     use_merged: bool, train_mode: bool = False):
    """One decision round of the message-based policy; returns waypoints."""
    n = sim.n_robots
    graphs = [sim.observation_graph(i, use_merged=use_merged) for i in range(n)]
    encoded, messages = [], []
    with torch.no_grad():
        for g in graphs:
            e, mu = policy_message(policy, g)
            encoded.append(e)
            messages.append(mu.numpy().astype(np.float32))
    received = sim.share_messages(messages, ledger, step)
    waypoints = []
    with torch.no_grad():
        for i in range(n):
            out = pointer_policy(policy, encoded[i], graphs[i],
                                 torch.as_tensor(messages[i]), received[i],
                                 train_mode=train_mode, rng=rng)
            target = int(graphs[i].action_targets()[out.action])
            waypoints.append(tuple(graphs[i].coords[target]))
    return waypoints


def run_episode(config: RunConfig, grid: world.GridMap,
                policy: PolicyNetwork | None = None, map_id: int = 0) -> EpisodeResult:
    """Run one episode of the configured mode on one map.

    Learned modes require `policy`.  The bandwidth ledger records pose
    packets for every mode, learned-message packets for the learned modes and
    full belief maps for the sharing regimes (global_map, mtsp_based).
    """
    if config.mode in LEARNED_MODES and policy is None:
        raise ValueError(f"mode {config.mode} requires a policy checkpoint")
    rng = np.random.default_rng(config.seed * 1_000_003 + map_id)
    sim = ExplorationSim(grid, config.n_robots, config.geometry, rng=rng,
                         step_cap_factor=config.step_cap_factor)
    ledger = BandwidthLedger(config.n_robots)
    planning_time = 0.0
    aborted = False
    step = 0
    while True:
        rate = sim.exploration_rate()
        if rate >= config.theta or step >= sim.step_cap:
            aborted = step >= sim.step_cap and rate < config.theta
            break
        sim.share_poses(ledger, step)
        if config.mode in ("global_map", "mtsp_based"):
            sim.share_beliefs(ledger, step)
        t0 = time.perf_counter()
        try:
            waypoints = _plan_step(config, sim, policy, ledger, step, rng)
        except ValueError:
            aborted = True
            break
        planning_time += time.perf_counter() - t0
        if waypoints is None:  # planner signals completion; theta check decides
            break
        for i, wp in enumerate(waypoints):
            if wp is not None:
                sim.move(i, wp)
        step += 1
        sim.steps_taken = step
    lengths = [r.distance for r in sim.robots]
    return EpisodeResult(
        mode=config.mode,
        trajectory_lengths=lengths,
        makespan=max(lengths),
        steps=step,
        exploration_rate=sim.exploration_rate(),
        upload_bytes=[int(b) for b in ledger.upload],
        download_bytes=[int(b) for b in ledger.download],
        planning_time_s=planning_time,
        aborted=aborted,
        trajectories=[list(r.trajectory) for r in sim.robots],
    )


def _plan_step(config: RunConfig, sim: ExplorationSim, policy, ledger, step, rng):
    mode = config.mode
    if mode == "ours":
        return _learned_actions(sim, policy, ledger, step, rng, use_merged=False)
    if mode == "global_map":
        return _learned_actions(sim, policy, ledger, step, rng, use_merged=True)
    if mode == "mtsp_based":
        return baselines.mtsp_step(sim.merged_belief(), sim.poses(), config.geometry,
                                   min_gain=config.viewpoint_min_gain)
    if mode == "nearest_frontier":
        return [
            baselines.nearest_frontier_policy(sim.robots[i].belief, sim.robots[i].pose,
                                              config.geometry)
            for i in range(sim.n_robots)
        ]
    if mode == "random":
        waypoints = []
        for i in range(sim.n_robots):
            g = sim.observation_graph(i)
            v = baselines.random_policy(g, rng)
            waypoints.append(tuple(g.coords[v]))
        return waypoints
    raise AssertionError(mode)


@dataclass
class EvalSummary:
    mode: str
    n_maps: int
    mean_makespan: float
    std_makespan: float
    mean_uv: float
    std_uv: float
    mean_dv: float
    std_dv: float
    mean_time: float
    completion_rate: float


def eval_row(result: EpisodeResult, config: RunConfig, map_id) -> dict:
    """One metrics row per map; worst-robot statistics as reported upstream."""
    return {
        "mode": result.mode,
        "map_id": map_id,
        "n_robots": config.n_robots,
        "theta": f"{config.theta:g}",
        "D_m": f"{result.makespan:.6f}",
        "UV_bytes": max(result.upload_bytes),
        "DV_bytes": max(result.download_bytes),
        "T_s": f"{result.planning_time_s:.3f}",
        "steps": result.steps,
        "rate": f"{result.exploration_rate:.6f}",
    }


def evaluate(config: RunConfig, maps: list, policy: PolicyNetwork | None = None,
             map_ids: list | None = None) -> tuple[list[dict], EvalSummary]:
    """Run every map and aggregate worst-robot metrics (mean and std)."""
    if not maps:
        raise ValueError("evaluate needs at least one map")
    ids = map_ids if map_ids is not None else list(range(len(maps)))
    rows, results = [], []
    for map_id, grid in zip(ids, maps):
        seed_id = int(str(map_id)) if str(map_id).isdigit() else abs(hash(str(map_id))) % 10**6
        result = run_episode(config, grid, policy=policy, map_id=seed_id)
        rows.append(eval_row(result, config, map_id))
        results.append(result)
    mk = np.array([r.makespan for r in results])
    uv = np.array([max(r.upload_bytes) for r in results], dtype=np.float64)
    dv = np.array([max(r.download_bytes) for r in results], dtype=np.float64)
    ts = np.array([r.planning_time_s for r in results])
    summary = EvalSummary(
        mode=config.mode, n_maps=len(results),
        mean_makespan=float(mk.mean()), std_makespan=float(mk.std()),
        mean_uv=float(uv.mean()), std_uv=float(uv.std()),
        mean_dv=float(dv.mean()), std_dv=float(dv.std()),
        mean_time=float(ts.mean()),
        completion_rate=float(np.mean([not r.aborted for r in results])),
    )
    return rows, summary


def write_eval_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=EVAL_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def write_ledger_csv(path, ledger: BandwidthLedger) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["robot", "step", "uv_bytes", "dv_bytes", "cum_uv", "cum_dv"])
        writer.writerows(ledger.report_rows())


def compare(configs: list[RunConfig], maps: list, policies: dict,
            map_ids: list | None = None):
    """Evaluate several modes on one map set; returns (rows, summaries)."""
    all_rows, summaries = [], []
    for cfg in configs:
        rows, summary = evaluate(cfg, maps, policies.get(cfg.mode), map_ids)
        all_rows.extend(rows)
        summaries.append(summary)
    return all_rows, summaries
