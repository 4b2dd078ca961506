"""Privileged soft actor-critic training.

Rollouts interact through belief-derived observation graphs and learned
messages only; the trainer attaches a privileged ground-truth graph to each
stored transition for the critics.  Both critics and their targets consume
the privileged graph (or the partial graph when privileged_critic is off,
for ablation runs); the policy never sees ground truth.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
import pickle
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import torch

from . import belief as bel
from . import world
from .comms import BandwidthLedger
from .config import GeometryConfig, disc_cell_count
from .graph import InformativeGraph
from .policy_net import CriticNetwork, NetConfig, PolicyNetwork, pointer_policy, policy_message, save_checkpoint
from .sim import ExplorationSim, lattice_start_poses

# --- rewards -------------------------------------------------------------------


@dataclass(frozen=True)
class RewardConfig:
    rho: float  # area normalization: 1 / free-cell count of a full sensor disc
    momentum_coeff: float = 0.1
    distance_coeff: float = 0.0125  # 1 / (2 * sensor range)
    finish_bonus: float = 20.0
    literal_momentum: bool = False

    def __post_init__(self):
        for name in ("rho", "momentum_coeff", "distance_coeff", "finish_bonus"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def for_geometry(cls, geometry: GeometryConfig, **overrides) -> "RewardConfig":
        disc = disc_cell_count(geometry.sensor_range_m, geometry.resolution_m)
        kwargs = dict(rho=1.0 / disc, distance_coeff=1.0 / (2.0 * geometry.sensor_range_m))
        kwargs.update(overrides)
        return cls(**kwargs)


def momentum_reward(prev_dir: np.ndarray, p_t, p_next, coeff: float = 0.1,
                    literal: bool = False) -> tuple[float, np.ndarray]:
    """Bonus for keeping the previous heading; returns (reward, new direction).

    The default direction is the unit displacement from p_t to p_next.  The
    literal variant keeps the published elementwise-product form
    (x1*x2, y1*y2) for study; it is dimensionally inconsistent and off by
    default.
    """
    p_t = np.asarray(p_t, dtype=np.float64)
    p_next = np.asarray(p_next, dtype=np.float64)
    if literal:
        beta = p_t * p_next
        return coeff * float(np.dot(prev_dir, beta)), beta
    delta = p_next - p_t
    norm = float(np.hypot(delta[0], delta[1]))
    if norm == 0.0:
        return 0.0, prev_dir
    beta = delta / norm
    return coeff * float(np.dot(prev_dir, beta)), beta


def observation_reward(p_next, truth: world.GridMap, merged_before: bel.BeliefMap,
                       sensor_range_m: float, rho: float) -> float:
    """rho times the true-free cells around the new viewpoint that were still
    unknown in the merged belief (training-only: reads the ground truth)."""
    if not truth.is_free_at(p_next[0], p_next[1]):
        raise ValueError("viewpoint must lie in true free space")
    res = truth.resolution
    target = (truth.cells == world.FREE) & (merged_before.cells == world.UNKNOWN)
    rows, cols = np.nonzero(target)
    if rows.size == 0:
        return 0.0
    cx = (cols + 0.5) * res
    cy = (rows + 0.5) * res
    d2 = (cx - p_next[0]) ** 2 + (cy - p_next[1]) ** 2
    return rho * int(np.count_nonzero(d2 <= sensor_range_m**2))


def team_reward(merged_before: bel.BeliefMap, merged_after: bel.BeliefMap,
                rho: float) -> float:
    """rho times the free area the whole team newly revealed this step."""
    before = int(np.count_nonzero(merged_before.cells == world.FREE))
    after = int(np.count_nonzero(merged_after.cells == world.FREE))
    newly = after - before
    unknown_before = merged_before.cells == world.UNKNOWN
    if np.any((merged_after.cells == world.UNKNOWN) & ~unknown_before):
        raise ValueError("belief monotonicity violated between steps")
    return rho * newly


@dataclass(frozen=True)
class RewardParts:
    observation: float = 0.0
    momentum: float = 0.0
    team: float = 0.0
    finish: float = 0.0
    travel_cost: float = 0.0

    def total(self) -> float:
        return self.observation + self.momentum + self.team + self.finish - self.travel_cost


def step_reward(parts: RewardParts) -> float:
    return parts.total()


# --- transitions and replay buffer ----------------------------------------------


@dataclass
class GraphSnapshot:
    """Compact observation-graph record: normalized features, the attention
    edge list (mask zeros off the diagonal), the current vertex and its
    navigable neighbors (the action set)."""

    features: np.ndarray  # (N, 5) float32
    attend_src: np.ndarray  # (E,) int16
    attend_dst: np.ndarray  # (E,) int16
    current: int
    actions: np.ndarray  # (K,) int16

    @classmethod
    def from_graph(cls, g: InformativeGraph, utility_norm: float) -> "GraphSnapshot":
        src, dst = np.nonzero(g.edge_mask == 0)
        off_diag = src != dst
        return cls(
            features=g.feature_matrix(utility_norm),
            attend_src=src[off_diag].astype(np.int16),
            attend_dst=dst[off_diag].astype(np.int16),
            current=int(g.current_index),
            actions=np.asarray(g.action_targets(), dtype=np.int16),
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class Transition:
    obs: GraphSnapshot
    messages: np.ndarray  # (M, d) float32 received this step
    critic_obs: GraphSnapshot
    action_map: np.ndarray  # (K,) int16: policy action slot -> critic action slot
    action: int
    reward: float
    reward_parts: RewardParts
    done: bool
    next_obs: GraphSnapshot
    next_messages: np.ndarray
    next_critic_obs: GraphSnapshot
    next_action_map: np.ndarray


def align_actions(obs: GraphSnapshot, obs_coords: np.ndarray,
                  critic_graph: InformativeGraph) -> np.ndarray:
    """Map each policy action to the critic-graph action on the same vertex
    coordinates; falls back to the nearest critic action if no exact match."""
    policy_targets = obs_coords[np.asarray(obs.actions, dtype=np.int64)]
    critic_targets = critic_graph.coords[critic_graph.action_targets()]
    out = np.empty(len(policy_targets), dtype=np.int16)
    lookup = {
        (round(float(c[0]), 6), round(float(c[1]), 6)): k
        for k, c in enumerate(critic_targets)
    }
    for i, c in enumerate(policy_targets):
        key = (round(float(c[0]), 6), round(float(c[1]), 6))
        if key in lookup:
            out[i] = lookup[key]
        else:
            d = np.hypot(critic_targets[:, 0] - c[0], critic_targets[:, 1] - c[1])
            out[i] = int(np.argmin(d))
    return out


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise ValueError("non-finite reward")
        if not 0 <= t.action < len(t.obs.actions):
            raise ValueError("action index outside the stored neighbor set")
        if len(t.action_map) != len(t.obs.actions):
            raise ValueError("action map length mismatch")
        if len(t.next_action_map) != len(t.next_obs.actions):
            raise ValueError("next action map length mismatch")
        self._items.append(t)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[int(i)] for i in idx]


# --- batched tensors -------------------------------------------------------------


@dataclass
class GraphBatch:
    features: torch.Tensor  # (B, N, 5)
    mask: torch.Tensor  # (B, N, N) bool, True = blocked
    node_pad: torch.Tensor  # (B, N) bool, True = padding
    current: torch.Tensor  # (B,) long
    actions: torch.Tensor  # (B, K) long, padded with 0
    action_valid: torch.Tensor  # (B, K) bool


def collate_graphs(snaps: list[GraphSnapshot], dtype=torch.float32) -> GraphBatch:
    b = len(snaps)
    n_max = max(s.n for s in snaps)
    k_max = max(len(s.actions) for s in snaps)
    feats = torch.zeros((b, n_max, 5), dtype=dtype)
    mask = torch.ones((b, n_max, n_max), dtype=torch.bool)
    node_pad = torch.ones((b, n_max), dtype=torch.bool)
    current = torch.zeros(b, dtype=torch.long)
    actions = torch.zeros((b, k_max), dtype=torch.long)
    action_valid = torch.zeros((b, k_max), dtype=torch.bool)
    ar = torch.arange(n_max)
    mask[:, ar, ar] = False  # keep padded rows well-defined via self-edges
    for i, s in enumerate(snaps):
        n = s.n
        feats[i, :n] = torch.from_numpy(s.features)
        mask[i, s.attend_src.astype(np.int64), s.attend_dst.astype(np.int64)] = False
        node_pad[i, :n] = False
        current[i] = s.current
        k = len(s.actions)
        actions[i, :k] = torch.from_numpy(s.actions.astype(np.int64))
        action_valid[i, :k] = True
    return GraphBatch(feats, mask, node_pad, current, actions, action_valid)


def collate_messages(all_msgs: list[np.ndarray], d: int, dtype=torch.float32):
    b = len(all_msgs)
    m_max = max((m.shape[0] for m in all_msgs), default=0)
    msgs = torch.zeros((b, m_max, d), dtype=dtype)
    blocked = torch.ones((b, m_max), dtype=torch.bool)
    for i, m in enumerate(all_msgs):
        if m.shape[0]:
            msgs[i, : m.shape[0]] = torch.from_numpy(np.asarray(m, dtype=np.float32))
            blocked[i, : m.shape[0]] = False
    return msgs, blocked


def collate_action_maps(maps: list[np.ndarray], k_max: int) -> torch.Tensor:
    out = torch.zeros((len(maps), k_max), dtype=torch.long)
    for i, m in enumerate(maps):
        out[i, : len(m)] = torch.from_numpy(m.astype(np.int64))
    return out


# --- SAC -------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    n_robots: int = 4
    episode_len: int = 128
    buffer_capacity: int = 20000
    warmup_steps: int = 5000
    batch_size: int = 256
    learning_rate: float = 1e-5
    gamma: float = 1.0
    tau: float = 0.005
    updates_per_step: int = 2
    target_entropy_scale: float = 0.3
    alpha_init: float = 0.2
    episodes: int = 100
    theta: float = 0.95
    seed: int = 0
    privileged_critic: bool = True
    n_workers: int = 1
    checkpoint_every: int = 200
    # network
    d: int = 64
    encoder_layers: int = 6
    utility_norm: float = 30.0
    # environment
    map_size_m: float = 100.0
    room_count_min: int = 8
    room_count_max: int = 15
    corridor_width_m: float = 4.5
    n_train_maps: int = 40
    resolution_m: float = 0.25
    sensor_range_m: float = 20.0
    spacing_m: float = 4.0
    neighbor_radius_m: float = 12.0
    max_neighbors: int = 24
    step_cap_factor: float = 4.0
    literal_momentum: bool = False
    finish_bonus: float = 20.0

    def geometry(self) -> GeometryConfig:
        return GeometryConfig(
            resolution_m=self.resolution_m, sensor_range_m=self.sensor_range_m,
            spacing_m=self.spacing_m, neighbor_radius_m=self.neighbor_radius_m,
            max_neighbors=self.max_neighbors,
        )

    def net(self) -> NetConfig:
        return NetConfig(d=self.d, encoder_layers=self.encoder_layers,
                         utility_norm=self.utility_norm)

    def rewards(self) -> RewardConfig:
        return RewardConfig.for_geometry(
            self.geometry(), finish_bonus=self.finish_bonus,
            literal_momentum=self.literal_momentum,
        )


@dataclass
class SacState:
    policy: PolicyNetwork
    critic1: CriticNetwork
    critic2: CriticNetwork
    target1: CriticNetwork
    target2: CriticNetwork
    log_alpha: torch.Tensor
    policy_opt: torch.optim.Optimizer
    critic_opt: torch.optim.Optimizer
    alpha_opt: torch.optim.Optimizer

    @classmethod
    def create(cls, net_cfg: NetConfig, lr: float, alpha_init: float) -> "SacState":
        policy = PolicyNetwork(net_cfg)
        critic1 = CriticNetwork(net_cfg)
        critic2 = CriticNetwork(net_cfg)
        target1 = CriticNetwork(net_cfg)
        target2 = CriticNetwork(net_cfg)
        target1.load_state_dict(critic1.state_dict())
        target2.load_state_dict(critic2.state_dict())
        for p in list(target1.parameters()) + list(target2.parameters()):
            p.requires_grad_(False)
        log_alpha = torch.tensor(float(np.log(alpha_init)), requires_grad=True)
        return cls(
            policy=policy, critic1=critic1, critic2=critic2,
            target1=target1, target2=target2, log_alpha=log_alpha,
            policy_opt=torch.optim.Adam(policy.parameters(), lr=lr),
            critic_opt=torch.optim.Adam(
                list(critic1.parameters()) + list(critic2.parameters()), lr=lr),
            alpha_opt=torch.optim.Adam([log_alpha], lr=lr * 10),
        )

    @property
    def alpha(self) -> torch.Tensor:
        return self.log_alpha.exp()


def soft_update(target: torch.nn.Module, online: torch.nn.Module, tau: float) -> None:
    with torch.no_grad():
        for tp, op in zip(target.parameters(), online.parameters()):
            tp.mul_(1.0 - tau).add_(op, alpha=tau)


@dataclass
class CollatedBatch:
    obs: GraphBatch
    messages: torch.Tensor
    msg_blocked: torch.Tensor
    critic_obs: GraphBatch
    action_map: torch.Tensor  # (B, K) long into critic action slots
    action: torch.Tensor  # (B,) long
    reward: torch.Tensor  # (B,)
    done: torch.Tensor  # (B,)
    next_obs: GraphBatch
    next_messages: torch.Tensor
    next_msg_blocked: torch.Tensor
    next_critic_obs: GraphBatch
    next_action_map: torch.Tensor


def collate_batch(batch: list[Transition], d: int, dtype=torch.float32) -> CollatedBatch:
    obs = collate_graphs([t.obs for t in batch], dtype)
    nxt = collate_graphs([t.next_obs for t in batch], dtype)
    msgs, msg_blocked = collate_messages([t.messages for t in batch], d, dtype)
    nmsgs, nmsg_blocked = collate_messages([t.next_messages for t in batch], d, dtype)
    return CollatedBatch(
        obs=obs, messages=msgs, msg_blocked=msg_blocked,
        critic_obs=collate_graphs([t.critic_obs for t in batch], dtype),
        action_map=collate_action_maps([t.action_map for t in batch], obs.actions.shape[1]),
        action=torch.tensor([t.action for t in batch], dtype=torch.long),
        reward=torch.tensor([t.reward for t in batch], dtype=dtype),
        done=torch.tensor([float(t.done) for t in batch], dtype=dtype),
        next_obs=nxt, next_messages=nmsgs, next_msg_blocked=nmsg_blocked,
        next_critic_obs=collate_graphs([t.next_critic_obs for t in batch], dtype),
        next_action_map=collate_action_maps(
            [t.next_action_map for t in batch], nxt.actions.shape[1]),
    )


def _policy_distribution(policy: PolicyNetwork, gb: GraphBatch, messages, msg_blocked):
    """Log-probs (B, K) over padded action slots; invalid slots are -inf."""
    encoded = policy.encode(gb.features, gb.mask)
    mu = policy.message(encoded, gb.current, gb.node_pad)
    idx = gb.actions.unsqueeze(-1).expand(-1, -1, encoded.shape[2])
    nbr = encoded.gather(1, idx)
    return policy.action_log_probs(mu, messages, nbr, msg_blocked, ~gb.action_valid)


def _critic_q(critic: CriticNetwork, gb: GraphBatch, action_map: torch.Tensor):
    """Q (B, K) over the policy's action slots via the stored alignment map."""
    q_all = critic.q_values(gb.features, gb.mask, gb.current, gb.actions, gb.node_pad)
    return q_all.gather(1, action_map.clamp(min=0, max=q_all.shape[1] - 1))


def _safe_log_probs(logp: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Replace -inf entries of padded action slots: their probability is
    exactly zero, but the -inf value itself would poison gradients through
    any product it appears in."""
    return logp.masked_fill(~valid, 0.0)


def critic_targets(state: SacState, cb: CollatedBatch, gamma: float) -> torch.Tensor:
    """Soft one-step targets from the min of both target critics."""
    with torch.no_grad():
        valid = cb.next_obs.action_valid
        logp = _policy_distribution(state.policy, cb.next_obs, cb.next_messages,
                                    cb.next_msg_blocked)
        logp = _safe_log_probs(logp, valid)
        probs = logp.exp() * valid
        q1 = _critic_q(state.target1, cb.next_critic_obs, cb.next_action_map)
        q2 = _critic_q(state.target2, cb.next_critic_obs, cb.next_action_map)
        qmin = torch.min(q1, q2)
        alpha = state.alpha
        v_next = (probs * (qmin - alpha * logp)).sum(dim=-1)
        return cb.reward + gamma * (1.0 - cb.done) * v_next


def critic_loss(critic: CriticNetwork, cb: CollatedBatch, y: torch.Tensor) -> torch.Tensor:
    q = _critic_q(critic, cb.critic_obs, cb.action_map)
    q_taken = q.gather(1, cb.action.unsqueeze(1)).squeeze(1)
    return torch.mean((q_taken - y) ** 2)


def policy_loss(state: SacState, cb: CollatedBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Expected (alpha*logpi - minQ) under the current policy; Q detached.
    Returns (loss, mean entropy)."""
    valid = cb.obs.action_valid
    logp = _policy_distribution(state.policy, cb.obs, cb.messages, cb.msg_blocked)
    logp = _safe_log_probs(logp, valid)
    probs = logp.exp() * valid
    with torch.no_grad():
        q1 = _critic_q(state.critic1, cb.critic_obs, cb.action_map)
        q2 = _critic_q(state.critic2, cb.critic_obs, cb.action_map)
        qmin = torch.min(q1, q2)
    alpha = state.alpha.detach()
    loss = (probs * (alpha * logp - qmin)).sum(dim=-1).mean()
    ent = (-probs * logp).sum(-1)
    return loss, ent.mean()


def sac_update(state: SacState, batch: list[Transition], cfg: TrainConfig,
               target_entropy: float | None = None) -> dict:
    """One gradient step on both critics, the policy and the temperature,
    plus a soft target update.  Raises on non-finite losses."""
    cb = collate_batch(batch, cfg.d)
    if target_entropy is None:
        avg_k = cb.obs.action_valid.float().sum(-1).mean().clamp(min=1.0)
        target_entropy = cfg.target_entropy_scale * float(torch.log(avg_k))

    y = critic_targets(state, cb, cfg.gamma)
    c1 = critic_loss(state.critic1, cb, y)
    c2 = critic_loss(state.critic2, cb, y)
    closs = c1 + c2
    state.critic_opt.zero_grad()
    closs.backward()
    state.critic_opt.step()

    ploss, entropy = policy_loss(state, cb)
    state.policy_opt.zero_grad()
    ploss.backward()
    state.policy_opt.step()

    alpha_loss = state.log_alpha.exp() * (entropy.detach() - target_entropy)
    state.alpha_opt.zero_grad()
    alpha_loss.backward()
    state.alpha_opt.step()

    soft_update(state.target1, state.critic1, cfg.tau)
    soft_update(state.target2, state.critic2, cfg.tau)

    report = {
        "critic_loss": float(closs.detach()),
        "policy_loss": float(ploss.detach()),
        "alpha_loss": float(alpha_loss.detach()),
        "entropy": float(entropy.detach()),
        "alpha": float(state.alpha.detach()),
    }
    for name, value in report.items():
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite {name} in sac_update: {report}")
    return report


# --- episode rollout for training -------------------------------------------------


def make_train_maps(cfg: TrainConfig, seed_offset: int = 0) -> list[world.GridMap]:
    maps = []
    for i in range(cfg.n_train_maps):
        dc = world.DungeonConfig(
            map_size_m=cfg.map_size_m,
            room_count_range=(cfg.room_count_min, cfg.room_count_max),
            corridor_width_m=cfg.corridor_width_m,
            seed=cfg.seed * 100003 + seed_offset + i,
            resolution_m=cfg.resolution_m,
        )
        maps.append(world.generate_dungeon(dc))
    return maps


@dataclass
class EpisodeStats:
    steps: int = 0
    explored_rate: float = 0.0
    makespan: float = 0.0
    reward_sum: float = 0.0


def run_training_episode(grid: world.GridMap, policy: PolicyNetwork, cfg: TrainConfig,
                         rng: np.random.Generator, sample_actions: bool = True
                         ) -> tuple[list[Transition], EpisodeStats]:
    """Roll one episode with the sampling policy and assemble transitions.

    The policy consumes belief graphs and received messages; privileged
    graphs are built separately here and attached for the critics only.
    """
    geometry = cfg.geometry()
    rewards = cfg.rewards()
    net_cfg = cfg.net()
    sim = ExplorationSim(grid, cfg.n_robots, geometry, rng=rng,
                         step_cap_factor=cfg.step_cap_factor)
    ledger = BandwidthLedger(cfg.n_robots)
    step_cap = min(sim.step_cap, cfg.episode_len)
    transitions: list[Transition] = []
    pending: list[dict] = []
    move_dirs = [np.zeros(2) for _ in range(cfg.n_robots)]
    stats = EpisodeStats()

    def observe_all():
        merged = sim.merged_belief()
        obs_graphs = [sim.observation_graph(i) for i in range(cfg.n_robots)]
        critic_graphs = [
            sim.ground_truth_graph(i, merged) if cfg.privileged_critic else obs_graphs[i]
            for i in range(cfg.n_robots)
        ]
        encoded, messages = [], []
        with torch.no_grad():
            for g in obs_graphs:
                e, mu = policy_message(policy, g)
                encoded.append(e)
                messages.append(mu.numpy().astype(np.float32))
        received = sim.share_messages(messages, ledger, sim.steps_taken)
        sim.share_poses(ledger, sim.steps_taken)
        return merged, obs_graphs, critic_graphs, encoded, messages, received

    for step in range(step_cap):
        merged_before, obs_graphs, critic_graphs, encoded, messages, received = observe_all()
        rate_before = bel.exploration_rate(merged_before, sim.grid)

        snaps = []
        for i in range(cfg.n_robots):
            og = obs_graphs[i]
            snap = GraphSnapshot.from_graph(og, cfg.utility_norm)
            if snap.actions.size == 0:
                stats.steps = step
                stats.explored_rate = rate_before
                stats.makespan = max(r.distance for r in sim.robots)
                return transitions, stats  # stuck robot: drop pending, abort
            snaps.append(snap)

        # finalize the previous step's transitions now that t+1 data exists
        for rec in pending:
            i = rec["robot"]
            transitions.append(Transition(
                obs=rec["obs"], messages=rec["messages"],
                critic_obs=rec["critic_obs"], action_map=rec["action_map"],
                action=rec["action"], reward=rec["reward"],
                reward_parts=rec["parts"], done=False,
                next_obs=snaps[i],
                next_messages=np.asarray(received[i], dtype=np.float32).reshape(-1, cfg.d),
                next_critic_obs=GraphSnapshot.from_graph(critic_graphs[i], cfg.utility_norm),
                next_action_map=align_actions(snaps[i], obs_graphs[i].coords, critic_graphs[i]),
            ))
        pending = []

        recs = []
        with torch.no_grad():
            for i in range(cfg.n_robots):
                out = pointer_policy(policy, encoded[i], obs_graphs[i],
                                     torch.as_tensor(messages[i]), received[i],
                                     train_mode=sample_actions, rng=rng)
                target_vertex = int(obs_graphs[i].action_targets()[out.action])
                waypoint = obs_graphs[i].coords[target_vertex]
                recs.append({
                    "robot": i,
                    "obs": snaps[i],
                    "messages": np.asarray(received[i], dtype=np.float32).reshape(-1, cfg.d),
                    "critic_obs": GraphSnapshot.from_graph(critic_graphs[i], cfg.utility_norm),
                    "action_map": align_actions(snaps[i], obs_graphs[i].coords, critic_graphs[i]),
                    "action": out.action,
                    "p_t": np.asarray(sim.robots[i].pose),
                    "waypoint": waypoint,
                })

        hops = [sim.move(r["robot"], r["waypoint"]) for r in recs]
        merged_after = sim.merged_belief()
        rate_after = bel.exploration_rate(merged_after, sim.grid)
        finished = rate_after >= cfg.theta
        done = finished or step + 1 >= step_cap
        xi = team_reward(merged_before, merged_after, rewards.rho)

        for i, rec in enumerate(recs):
            lam, move_dirs[i] = momentum_reward(
                move_dirs[i], rec["p_t"], rec["waypoint"],
                coeff=rewards.momentum_coeff, literal=rewards.literal_momentum)
            parts = RewardParts(
                observation=observation_reward(rec["waypoint"], sim.grid, merged_before,
                                               geometry.sensor_range_m, rewards.rho),
                momentum=lam,
                team=xi,
                finish=rewards.finish_bonus if finished and rate_before < cfg.theta else 0.0,
                travel_cost=rewards.distance_coeff * hops[i],
            )
            rec["parts"] = parts
            rec["reward"] = step_reward(parts)
            stats.reward_sum += rec["reward"]
        sim.steps_taken = step + 1

        if done:
            # build terminal observations once to complete the transitions
            _, obs_graphs2, critic_graphs2, _, _, received2 = observe_all()
            for rec in recs:
                i = rec["robot"]
                snap2 = GraphSnapshot.from_graph(obs_graphs2[i], cfg.utility_norm)
                transitions.append(Transition(
                    obs=rec["obs"], messages=rec["messages"],
                    critic_obs=rec["critic_obs"], action_map=rec["action_map"],
                    action=rec["action"], reward=rec["reward"],
                    reward_parts=rec["parts"], done=bool(finished),
                    next_obs=snap2,
                    next_messages=np.asarray(received2[i], dtype=np.float32).reshape(-1, cfg.d),
                    next_critic_obs=GraphSnapshot.from_graph(critic_graphs2[i], cfg.utility_norm),
                    next_action_map=align_actions(snap2, obs_graphs2[i].coords, critic_graphs2[i]),
                ))
            stats.steps = step + 1
            stats.explored_rate = rate_after
            stats.makespan = max(r.distance for r in sim.robots)
            return transitions, stats
        pending = recs

    raise AssertionError("unreachable: loop exits via done")


# --- training loop ----------------------------------------------------------------


CURVE_FIELDS = ["episode", "steps", "explored_rate", "makespan", "reward_sum",
                "critic_loss", "policy_loss", "alpha_loss", "entropy", "alpha"]


def _curve_row(episode: int, stats: EpisodeStats, report: dict) -> dict:
    row = {
        "episode": episode,
        "steps": stats.steps,
        "explored_rate": f"{stats.explored_rate:.6f}",
        "makespan": f"{stats.makespan:.6f}",
        "reward_sum": f"{stats.reward_sum:.6f}",
    }
    for key in ("critic_loss", "policy_loss", "alpha_loss", "entropy", "alpha"):
        row[key] = f"{report.get(key, float('nan')):.6f}"
    return row


_WORKER_STATE: dict = {}


def _worker_init(cfg_blob: bytes):
    torch.set_num_threads(1)
    cfg: TrainConfig = pickle.loads(cfg_blob)
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["maps"] = make_train_maps(cfg)
    _WORKER_STATE["policy"] = PolicyNetwork(cfg.net())


def _worker_rollout(args):
    weights_blob, map_index, episode_seed = args
    cfg: TrainConfig = _WORKER_STATE["cfg"]
    policy: PolicyNetwork = _WORKER_STATE["policy"]
    policy.load_state_dict(pickle.loads(weights_blob))
    rng = np.random.default_rng(episode_seed)
    grid = _WORKER_STATE["maps"][map_index]
    transitions, stats = run_training_episode(grid, policy, cfg, rng)
    return transitions, stats


def train(cfg: TrainConfig, out_dir, progress=None) -> dict:
    """Parameter-shared training over procedurally generated maps.

    Writes training_curve.csv and periodic checkpoints under out_dir and
    returns a summary dict with the final checkpoint path.  Fully seeded:
    one worker plus one seed produces identical curves.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    state = SacState.create(cfg.net(), cfg.learning_rate, cfg.alpha_init)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    maps = make_train_maps(cfg)
    curve_path = out / "training_curve.csv"
    ckpt_path = out / "checkpoint.npz"
    last_report: dict = {}
    updates = 0
    t_start = time.time()

    pool = None
    if cfg.n_workers > 1:
        ctx = mp.get_context("spawn")
        pool = ctx.Pool(cfg.n_workers, _worker_init, (pickle.dumps(cfg),))

    with open(curve_path, "w", newline="") as curve_file:
        writer = csv.DictWriter(curve_file, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        episode = 0
        while episode < cfg.episodes:
            if pool is None:
                map_index = int(rng.integers(0, len(maps)))
                episode_seed = int(rng.integers(0, 2**63 - 1))
                ep_rng = np.random.default_rng(episode_seed)
                results = [run_training_episode(maps[map_index], state.policy, cfg, ep_rng)]
            else:
                jobs = []
                blob = pickle.dumps(state.policy.state_dict())
                for _ in range(min(cfg.n_workers, cfg.episodes - episode)):
                    map_index = int(rng.integers(0, len(maps)))
                    episode_seed = int(rng.integers(0, 2**63 - 1))
                    jobs.append((blob, map_index, episode_seed))
                results = pool.map(_worker_rollout, jobs)

            for transitions, stats in results:
                for t in transitions:
                    buffer.push(t)
                n_update_steps = stats.steps if len(buffer) >= cfg.warmup_steps else 0
                for _ in range(n_update_steps * cfg.updates_per_step):
                    batch = buffer.sample(cfg.batch_size, rng)
                    last_report = sac_update(state, batch, cfg)
                    updates += 1
                writer.writerow(_curve_row(episode, stats, last_report))
                curve_file.flush()
                episode += 1
                if progress is not None:
                    progress(episode, stats, last_report)
                if cfg.checkpoint_every and episode % cfg.checkpoint_every == 0:
                    save_checkpoint(out / f"checkpoint_ep{episode}.npz", state.policy,
                                    {"episode": episode, "train_seed": cfg.seed})
    if pool is not None:
        pool.close()
        pool.join()
    save_checkpoint(ckpt_path, state.policy,
                    {"episode": episode, "train_seed": cfg.seed})
    return {
        "checkpoint": str(ckpt_path),
        "curve": str(curve_path),
        "episodes": episode,
        "updates": updates,
        "wall_time_s": time.time() - t_start,
    }
