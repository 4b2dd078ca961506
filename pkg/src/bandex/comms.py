"""Inter-robot exchange: wire formats, synchronous broadcast, byte ledgers.

Payloads are bit-exact and little-endian: a learned message is d float32
values (4d bytes), a shared belief map is one byte per cell (unknown=0,
free=1, occupied=2), and a pose is two 32-bit fixed-point coordinates
(millimeters) totalling 8 bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .belief import BeliefMap

POSE_BYTES = 8
_POSE_SCALE = 1000.0  # millimeter fixed point


class PayloadKind(Enum):
    LEARNED_MSG = "learned_msg"
    BELIEF_MAP = "belief_map"
    POSE = "pose"


@dataclass(frozen=True)
class WirePacket:
    sender: int
    step: int
    kind: PayloadKind
    payload: bytes


def encode_learned(msg: np.ndarray) -> bytes:
    """d float32 values, little-endian; exact round trip."""
    arr = np.asarray(msg, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError("learned message must be a flat vector")
    return arr.astype("<f4").tobytes()


def decode_learned(payload: bytes) -> np.ndarray:
    if len(payload) % 4 != 0:
        raise ValueError(f"learned-message payload length {len(payload)} not a multiple of 4")
    return np.frombuffer(payload, dtype="<f4").copy()


def encode_belief(b: BeliefMap) -> bytes:
    """One byte per cell, row-major."""
    return b.cells.tobytes()


def decode_belief(payload: bytes, height: int, width: int, resolution: float) -> BeliefMap:
    if len(payload) != height * width:
        raise ValueError(f"belief payload is {len(payload)} bytes, expected {height * width}")
    cells = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    return BeliefMap(cells=cells, resolution=resolution)


def encode_pose(x: float, y: float) -> bytes:
    return struct.pack("<ii", int(round(x * _POSE_SCALE)), int(round(y * _POSE_SCALE)))


def decode_pose(payload: bytes) -> tuple[float, float]:
    if len(payload) != POSE_BYTES:
        raise ValueError(f"pose payload is {len(payload)} bytes, expected {POSE_BYTES}")
    xi, yi = struct.unpack("<ii", payload)
    return xi / _POSE_SCALE, yi / _POSE_SCALE


@dataclass
class LedgerDelta:
    upload: dict = field(default_factory=dict)  # robot id -> bytes
    download: dict = field(default_factory=dict)


@dataclass
class BandwidthLedger:
    """Cumulative per-robot upload (UV) and download (DV) byte counters."""

    n_robots: int
    upload: np.ndarray = None
    download: np.ndarray = None
    per_step: list = field(default_factory=list)  # (step, robot, uv_delta, dv_delta)

    def __post_init__(self):
        if self.upload is None:
            self.upload = np.zeros(self.n_robots, dtype=np.int64)
        if self.download is None:
            self.download = np.zeros(self.n_robots, dtype=np.int64)

    def apply(self, delta: LedgerDelta, step: int) -> None:
        for robot in range(self.n_robots):
            uv = delta.upload.get(robot, 0)
            dv = delta.download.get(robot, 0)
            self.upload[robot] += uv
            self.download[robot] += dv
            if uv or dv:
                self.per_step.append((step, robot, uv, dv))

    def total_bytes(self) -> int:
        return int(self.upload.sum() + self.download.sum())

    def report_rows(self):
        """CSV rows: robot id, step, uv_bytes, dv_bytes, cumulative totals."""
        cum_uv = np.zeros(self.n_robots, dtype=np.int64)
        cum_dv = np.zeros(self.n_robots, dtype=np.int64)
        rows = []
        for step, robot, uv, dv in self.per_step:
            cum_uv[robot] += uv
            cum_dv[robot] += dv
            rows.append((robot, step, uv, dv, int(cum_uv[robot]), int(cum_dv[robot])))
        return rows


def broadcast(packets: list[WirePacket], n_robots: int) -> tuple[list[list[WirePacket]], LedgerDelta]:
    """Deliver each robot's packet to all other robots.

    Inboxes are ordered by sender id; each sender's upload grows by its
    payload size once, each receiver's download by the sum of received
    payload sizes.
    """
    senders = [p.sender for p in packets]
    if len(set(senders)) != len(senders):
        raise ValueError("duplicate sender ids in one broadcast")
    for s in senders:
        if not 0 <= s < n_robots:
            raise ValueError(f"sender id {s} out of range")
    ordered = sorted(packets, key=lambda p: p.sender)
    delta = LedgerDelta()
    inboxes: list[list[WirePacket]] = [[] for _ in range(n_robots)]
    for p in ordered:
        delta.upload[p.sender] = delta.upload.get(p.sender, 0) + len(p.payload)
        for r in range(n_robots):
            if r == p.sender:
                continue
            inboxes[r].append(p)
            delta.download[r] = delta.download.get(r, 0) + len(p.payload)
    return inboxes, delta


def savings_ratio(ledger_learned: BandwidthLedger, ledger_map: BandwidthLedger) -> float:
    """Fraction of communication volume avoided by the learned-message regime."""
    denom = ledger_map.total_bytes()
    if denom == 0:
        raise ValueError("map-sharing ledger carries zero bytes")
    return 1.0 - ledger_learned.total_bytes() / denom
