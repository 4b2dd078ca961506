"""Attention policy and critic networks.

The policy consumes one robot's observation graph: vertex features are
linearly projected to d dims, refined by masked self-attention encoder
layers, distilled into a d-dimensional message by a current-state decoder,
fused with the other robots' received messages by a cooperation decoder,
and turned into a distribution over the current vertex's navigable
neighbors by a pointer head.

The critic shares the encoder/decoder structure (separate weights), takes
the privileged ground-truth graph, skips the cooperation decoder, and emits
one Q value per neighbor action.

All modules are batch-first: features (B, N, d), masks (B, A, K) with
1 = blocked, 0 = attend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graph import InformativeGraph

RAW_FEATURE_DIM = 5
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    d: int = 64
    encoder_layers: int = 6
    ff_dim: int | None = None  # defaults to 4*d
    utility_norm: float = 30.0
    logit_clip: float = 10.0

    @property
    def ff_width(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.d


@dataclass
class PolicyOutput:
    log_probs: torch.Tensor  # (K,) log-probabilities over navigable neighbors
    action: int  # index into the neighbor list


class SingleHeadAttention(nn.Module):
    """Scaled dot-product attention with a hard mask.

    Weights are softmax(q.k/sqrt(d)) over unmasked keys and exactly zero on
    masked ones; a query row with every key masked violates the contract and
    raises.
    """

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)

    def forward(self, h_q, h_kv, mask=None):
        q = self.w_q(h_q)
        k = self.w_k(h_kv)
        v = self.w_v(h_kv)
        scores = q @ k.transpose(-2, -1) / np.sqrt(self.d)
        if mask is not None:
            blocked = mask.bool()
            if bool(blocked.all(dim=-1).any()):
                raise ValueError("attention query with every key masked")
            scores = scores.masked_fill(blocked, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        return weights @ v


class EncoderLayer(nn.Module):
    """Masked self-attention followed by a position-wise feed-forward,
    each with a residual connection and layer normalization."""

    def __init__(self, d: int, ff_dim: int):
        super().__init__()
        self.attention = SingleHeadAttention(d)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff_dim), nn.ReLU(), nn.Linear(ff_dim, d))

    def forward(self, h, mask):
        h = self.norm1(h + self.attention(h, h, mask))
        return self.norm2(h + self.ff(h))


class GraphEncoder(nn.Module):
    """Raw-feature projection plus stacked masked self-attention layers."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.input_proj = nn.Linear(RAW_FEATURE_DIM, cfg.d)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.d, cfg.ff_width) for _ in range(cfg.encoder_layers)
        )

    def project_raw(self, raw_features):
        return self.input_proj(raw_features)

    def encode(self, projected, edge_mask):
        h = projected
        for layer in self.layers:
            h = layer(h, edge_mask)
        return h

    def forward(self, raw_features, edge_mask):
        return self.encode(self.project_raw(raw_features), edge_mask)


class CurrentStateDecoder(nn.Module):
    """Cross-attention from the current vertex over all vertices; the
    attended output is concatenated with the current feature and re-projected
    to d dims (the robot's message in the policy network)."""

    def __init__(self, d: int):
        super().__init__()
        self.attention = SingleHeadAttention(d)
        self.merge = nn.Linear(2 * d, d)

    def forward(self, encoded, current_index, node_mask=None):
        # encoded (B, N, d); current_index (B,) long; node_mask (B, N) 1=blocked.
        b = encoded.shape[0]
        idx = current_index.view(b, 1, 1).expand(-1, 1, encoded.shape[2])
        query = encoded.gather(1, idx)  # (B, 1, d)
        mask = node_mask.unsqueeze(1) if node_mask is not None else None
        attended = self.attention(query, encoded, mask)
        return self.merge(torch.cat([attended, query], dim=-1)).squeeze(1)


class CooperationDecoder(nn.Module):
    """Cross-attention with the robot's own message as the query and the
    received messages as keys and values; accepts any number of messages.
    With no received message the output degenerates to the value projection
    of the robot's own message."""

    def __init__(self, d: int):
        super().__init__()
        self.attention = SingleHeadAttention(d)

    def forward(self, own, others, msg_mask=None):
        # own (B, d); others (B, M, d); msg_mask (B, M) 1=blocked.
        fallback = self.attention.w_v(own)
        if others.shape[1] == 0:
            return fallback
        query = own.unsqueeze(1)
        if msg_mask is None:
            return self.attention(query, others).squeeze(1)
        usable = ~msg_mask.bool().all(dim=-1)  # rows with at least one message
        safe_mask = msg_mask.bool().clone()
        safe_mask[~usable] = False  # keep softmax defined; rows overwritten below
        attended = self.attention(query, others, safe_mask.unsqueeze(1)).squeeze(1)
        return torch.where(usable.unsqueeze(-1), attended, fallback)


class PointerHead(nn.Module):
    """Compatibility scores between the cooperative feature and each
    neighbor feature, tanh-clipped and log-softmaxed."""

    def __init__(self, d: int, logit_clip: float):
        super().__init__()
        self.d = d
        self.logit_clip = logit_clip
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)

    def forward(self, f_co, neighbor_features, neighbor_mask=None):
        # f_co (B, d); neighbor_features (B, K, d); neighbor_mask (B, K) 1=invalid.
        if neighbor_features.shape[1] == 0:
            raise ValueError("pointer head needs at least one navigable neighbor")
        q = self.w_q(f_co).unsqueeze(1)
        k = self.w_k(neighbor_features)
        scores = (q * k).sum(-1) / np.sqrt(self.d)
        logits = self.logit_clip * torch.tanh(scores)
        if neighbor_mask is not None:
            blocked = neighbor_mask.bool()
            if bool(blocked.all(dim=-1).any()):
                raise ValueError("sample with zero valid neighbors")
            logits = logits.masked_fill(blocked, float("-inf"))
        return F.log_softmax(logits, dim=-1)


class PolicyNetwork(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = GraphEncoder(cfg)
        self.state_decoder = CurrentStateDecoder(cfg.d)
        self.coop_decoder = CooperationDecoder(cfg.d)
        self.pointer = PointerHead(cfg.d, cfg.logit_clip)

    def encode(self, raw_features, edge_mask):
        return self.encoder(raw_features, edge_mask)

    def message(self, encoded, current_index, node_mask=None):
        return self.state_decoder(encoded, current_index, node_mask)

    def action_log_probs(self, own_msg, received, neighbor_features,
                         msg_mask=None, neighbor_mask=None):
        f_co = self.coop_decoder(own_msg, received, msg_mask)
        return self.pointer(f_co, neighbor_features, neighbor_mask)


class CriticNetwork(nn.Module):
    """Encoder + current-state decoder over the privileged graph; the head
    scores the decoded state against each neighbor feature (plus a state
    value shared across actions) to produce per-action Q values."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = GraphEncoder(cfg)
        self.state_decoder = CurrentStateDecoder(cfg.d)
        self.q_query = nn.Linear(cfg.d, cfg.d, bias=False)
        self.q_key = nn.Linear(cfg.d, cfg.d, bias=False)
        self.value = nn.Linear(cfg.d, 1)

    def head(self, encoded, current_index, neighbor_index, node_mask=None):
        """Q per action from encoded features and neighbor indices (B, K)."""
        state = self.state_decoder(encoded, current_index, node_mask)
        idx = neighbor_index.unsqueeze(-1).expand(-1, -1, encoded.shape[2])
        nbr = encoded.gather(1, idx)
        q = self.q_query(state).unsqueeze(1)
        k = self.q_key(nbr)
        compat = (q * k).sum(-1) / np.sqrt(self.cfg.d)
        return compat + self.value(state)

    def q_values(self, raw_features, edge_mask, current_index, neighbor_index,
                 node_mask=None):
        encoded = self.encoder(raw_features, edge_mask)
        return self.head(encoded, current_index, neighbor_index, node_mask)


# --- single-graph (rollout) helpers ------------------------------------------


def graph_tensors(graph: InformativeGraph, utility_norm: float, device=None, dtype=None):
    """Raw features (1, N, 5) and attention mask (1, N, N) for one graph."""
    feats = torch.as_tensor(graph.feature_matrix(utility_norm), device=device)
    mask = torch.as_tensor(graph.edge_mask, dtype=torch.bool, device=device)
    if dtype is not None:
        feats = feats.to(dtype)
    return feats.unsqueeze(0), mask.unsqueeze(0)


@torch.no_grad()
def encode_single(net, graph: InformativeGraph):
    dtype = next(net.parameters()).dtype
    feats, mask = graph_tensors(graph, net.cfg.utility_norm, dtype=dtype)
    return net.encoder(feats, mask)


@torch.no_grad()
def policy_message(policy: PolicyNetwork, graph: InformativeGraph):
    """Encode one observation graph and emit the robot's broadcast message."""
    encoded = encode_single(policy, graph)
    idx = torch.tensor([graph.current_index])
    mu = policy.message(encoded, idx)
    return encoded, mu.squeeze(0)


@torch.no_grad()
def pointer_policy(policy: PolicyNetwork, encoded, graph: InformativeGraph,
                   own_msg, received_msgs, train_mode: bool, rng=None) -> PolicyOutput:
    """Distribution over the current vertex's navigable neighbors; samples in
    train mode, takes the argmax otherwise."""
    targets = graph.action_targets()
    if targets.size == 0:
        raise ValueError("current vertex has no navigable neighbor")
    nbr = encoded[:, torch.as_tensor(targets, dtype=torch.long), :]
    if received_msgs:
        others = torch.stack([torch.as_tensor(np.asarray(m)) for m in received_msgs])
        others = others.to(encoded.dtype).unsqueeze(0)
    else:
        others = torch.zeros((1, 0, policy.cfg.d), dtype=encoded.dtype)
    log_probs = policy.action_log_probs(own_msg.unsqueeze(0), others, nbr).squeeze(0)
    if train_mode:
        probs = torch.exp(log_probs).detach().cpu().numpy().astype(np.float64)
        probs /= probs.sum()
        action = int((rng or np.random.default_rng()).choice(len(probs), p=probs))
    else:
        action = int(torch.argmax(log_probs).item())
    return PolicyOutput(log_probs=log_probs, action=action)


@torch.no_grad()
def critic_value(critic: CriticNetwork, gt_graph: InformativeGraph) -> torch.Tensor:
    """Q values over the evaluated robot's navigable neighbors in the graph."""
    targets = gt_graph.action_targets()
    if targets.size == 0:
        raise ValueError("current vertex has no navigable neighbor")
    dtype = next(critic.parameters()).dtype
    feats, mask = graph_tensors(gt_graph, critic.cfg.utility_norm, dtype=dtype)
    idx = torch.tensor([gt_graph.current_index])
    nbr_index = torch.as_tensor(targets, dtype=torch.long).unsqueeze(0)
    return critic.q_values(feats, mask, idx, nbr_index).squeeze(0)


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(path, policy: PolicyNetwork, extra_manifest: dict | None = None):
    """Self-describing single-file checkpoint: named float32 arrays plus a
    JSON manifest; round-trips bit-exactly."""
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "net": asdict(policy.cfg),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    arrays = {
        f"param/{name}": tensor.detach().cpu().numpy()
        for name, tensor in policy.state_dict().items()
    }
    arrays["manifest"] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[PolicyNetwork, dict]:
    with np.load(path) as data:
        manifest = json.loads(bytes(data["manifest"].tobytes()).decode())
        net_kwargs = dict(manifest["net"])
        if net_kwargs.get("ff_dim") is not None:
            net_kwargs["ff_dim"] = int(net_kwargs["ff_dim"])
        cfg = NetConfig(**net_kwargs)
        policy = PolicyNetwork(cfg)
        state = {
            name[len("param/"):]: torch.as_tensor(data[name])
            for name in data.files
            if name.startswith("param/")
        }
    policy.load_state_dict(state)
    return policy, manifest
