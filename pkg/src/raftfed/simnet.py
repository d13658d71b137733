"""Deterministic message-passing substrate with per-cost-class traffic accounting.

Delivery is lossless and FIFO over a single global send index. Every message
falls into exactly one cost class; the :class:`TrafficLedger` counts messages
per class and prices them with per-class unit costs.
"""
from __future__ import annotations

import enum
import json
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np


class AddressingError(ValueError):
    """Raised when a message names an unknown node or is addressed to its sender."""


class CostClass(str, enum.Enum):
    HEARTBEAT = "heartbeat"  # eps1: heartbeats, votes, count exchange, announcements
    PROBE = "distribution_probe"  # eps2
    DATA_SHARE = "data_share"  # T~
    MODEL_TRANSFER = "model_transfer"  # P~


class Kind(str, enum.Enum):
    HEARTBEAT = "Heartbeat"
    HEARTBEAT_WITH_DATA_SIZE = "HeartbeatWithDataSize"
    PRO_VOTE = "ProVote"
    ANTI_VOTE = "AntiVote"
    COUNT_EXCHANGE = "CountExchange"
    LEADER_ANNOUNCE = "LeaderAnnounce"
    MODEL_TRANSFER = "ModelTransfer"
    DATA_SHARE = "DataShare"
    DISTRIBUTION_PROBE = "DistributionProbe"

    @property
    def cost_class(self) -> CostClass:
        return _COST_CLASS[self]


_COST_CLASS = {
    Kind.HEARTBEAT: CostClass.HEARTBEAT,
    Kind.HEARTBEAT_WITH_DATA_SIZE: CostClass.HEARTBEAT,
    Kind.PRO_VOTE: CostClass.HEARTBEAT,
    Kind.ANTI_VOTE: CostClass.HEARTBEAT,
    Kind.COUNT_EXCHANGE: CostClass.HEARTBEAT,
    Kind.LEADER_ANNOUNCE: CostClass.HEARTBEAT,
    Kind.DISTRIBUTION_PROBE: CostClass.PROBE,
    Kind.DATA_SHARE: CostClass.DATA_SHARE,
    Kind.MODEL_TRANSFER: CostClass.MODEL_TRANSFER,
}

# A node relaying a model to itself (singleton cluster, or a head that is also
# the global node) still counts as one transfer in the closed-form accounting.
_SELF_ADDRESSABLE = frozenset({Kind.MODEL_TRANSFER})


@dataclass(frozen=True)
class Message:
    kind: Kind
    src: int
    dst: int
    payload: Any = None

    @property
    def cost_class(self) -> CostClass:
        return self.kind.cost_class


@dataclass
class TrafficLedger:
    """Message counts per cost class, priced by ``unit_costs``."""

    unit_costs: dict[CostClass, float] = field(
        default_factory=lambda: {c: 1.0 for c in CostClass}
    )
    counts: dict[CostClass, int] = field(default_factory=lambda: {c: 0 for c in CostClass})
    kinds: Counter = field(default_factory=Counter)

    def __post_init__(self):
        costs = {c: 1.0 for c in CostClass}
        costs.update({CostClass(k): float(v) for k, v in self.unit_costs.items()})
        for c, v in costs.items():
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"unit cost for {c.value} must be a finite non-negative real, got {v}")
        self.unit_costs = costs
        counts = {c: 0 for c in CostClass}
        counts.update({CostClass(k): int(v) for k, v in self.counts.items()})
        self.counts = counts

    def record(self, kind: Kind, n: int = 1) -> None:
        if n < 0:
            raise ValueError("ledger counts are monotone")
        self.counts[kind.cost_class] += n
        self.kinds[kind] += n

    def cost(self, cls: CostClass) -> float:
        return self.counts[cls] * self.unit_costs[cls]

    def total(self) -> float:
        return sum(self.cost(c) for c in CostClass)

    def snapshot(self) -> dict[CostClass, int]:
        return dict(self.counts)

    def delta(self, since: dict[CostClass, int]) -> dict[CostClass, int]:
        return {c: self.counts[c] - since.get(c, 0) for c in CostClass}

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            c.value: {"count": self.counts[c], "unit_cost": self.unit_costs[c]} for c in CostClass
        }
        out["total"] = self.total()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficLedger":
        return cls(
            unit_costs={CostClass(k): v["unit_cost"] for k, v in d.items() if k != "total"},
            counts={CostClass(k): v["count"] for k, v in d.items() if k != "total"},
        )


@dataclass
class SimConfig:
    m: int
    p_join: float = 0.5
    eps1: float = 1.0
    eps2: float = 1.0
    data_share_cost: float = 1.0
    transfer_cost: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0.0 <= self.p_join <= 1.0:
            raise ValueError(f"p_join must lie in [0, 1], got {self.p_join}")
        for name in ("eps1", "eps2", "data_share_cost", "transfer_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def unit_costs(self) -> dict[CostClass, float]:
        return {
            CostClass.HEARTBEAT: self.eps1,
            CostClass.PROBE: self.eps2,
            CostClass.DATA_SHARE: self.data_share_cost,
            CostClass.MODEL_TRANSFER: self.transfer_cost,
        }


class Network:
    """Lossless FIFO network over a fixed node set.

    Messages are delivered in global send order. Ledger counts are always kept;
    the message bodies themselves are retained only while ``record`` is true,
    which keeps large election sweeps cheap.
    """

    def __init__(self, nodes: Iterable[int], ledger: TrafficLedger | None = None, record: bool = True):
        self.nodes = frozenset(int(n) for n in nodes)
        self.ledger = ledger if ledger is not None else TrafficLedger()
        self.record = record
        self.sent = 0
        self.log: list[Message] = []
        self._cursor = 0

    def _check(self, kind: Kind, src: int, dst: int) -> None:
        if src not in self.nodes:
            raise AddressingError(f"unknown sender {src}")
        if dst not in self.nodes:
            raise AddressingError(f"unknown recipient {dst}")
        if src == dst and kind not in _SELF_ADDRESSABLE:
            raise AddressingError(f"{kind.value} from node {src} to itself")

    def send(self, msg: Message) -> int:
        """Queue ``msg`` and return its global delivery index."""
        self._check(msg.kind, msg.src, msg.dst)
        idx = self.sent
        self.sent += 1
        self.ledger.record(msg.kind)
        if self.record:
            self.log.append(msg)
        return idx

    def broadcast(self, kind: Kind, src: int, peers: Iterable[int], payload: Any = None) -> int:
        peers = list(peers)
        if src in peers:
            raise AddressingError(f"broadcast peers must exclude the sender {src}")
        for p in peers:
            self.send(Message(kind, src, p, payload))
        return len(peers)

    def fanout(self, kind: Kind, senders: Sequence[int], peers: Sequence[int] | None = None,
               payload: Any = None) -> int:
        """Each sender, in order, broadcasts to ``peers`` (default: every other node).

        Equivalent to consecutive :meth:`broadcast` calls; when not recording,
        the ledger is updated in one step instead of per message.
        """
        if self.record:
            n = 0
            universe = sorted(self.nodes) if peers is None else list(peers)
            for s in senders:
                n += self.broadcast(kind, s, [p for p in universe if p != s], payload)
            return n
        if not self.nodes.issuperset(senders):
            raise AddressingError(f"unknown senders {sorted(set(senders) - self.nodes)}")
        if peers is None:
            n = len(senders) * (len(self.nodes) - 1)
        else:
            peer_set = set(peers)
            if not peer_set <= self.nodes:
                raise AddressingError(f"unknown recipients {sorted(peer_set - self.nodes)}")
            n = len(senders) * len(peer_set) - len(peer_set.intersection(senders))
        self.sent += n
        self.ledger.record(kind, n)
        return n

    def deliver(self) -> Iterator[Message]:
        """Yield queued messages not yet delivered, in send order."""
        while self._cursor < len(self.log):
            msg = self.log[self._cursor]
            self._cursor += 1
            yield msg


def expected_election_traffic(m: int, p1: float, eps1: float) -> float:
    """Closed-form election traffic: heartbeat phase + voting phase + pairwise count exchange."""
    if m < 1 or not 0.0 <= p1 <= 1.0 or eps1 < 0:
        raise ValueError("need m >= 1, 0 <= p1 <= 1, eps1 >= 0")
    if m == 1:
        return 0.0
    candidates = m * p1
    followers = m * (1.0 - p1)
    pairs = math.comb(int(math.floor(candidates + 1e-9)), 2)
    return 2.0 * followers * candidates * eps1 + 2.0 * pairs * eps1


def expected_global_election_traffic(m: int, p1: float, eps1: float, data_cost: float) -> float:
    """Global aggregator election: one data-share term plus the election terms."""
    return data_cost + expected_election_traffic(m, p1, eps1)


def expected_training_traffic(E: int, cluster_sizes: Sequence[int], transfer_cost: float) -> tuple[float, float]:
    """Model-transfer traffic of E epochs for RaftFed and for a server-based FL round trip.

    Returns ``(raftfed, conventional)``.
    """
    sizes = list(cluster_sizes)
    if not sizes:
        raise ValueError("cluster_sizes must be non-empty")
    if E < 1 or any(c < 1 for c in sizes) or transfer_cost < 0:
        raise ValueError("need E >= 1, every cluster size >= 1 and transfer_cost >= 0")
    n_clusters = len(sizes)
    raftfed = E * (sum(sizes) + n_clusters) * transfer_cost
    conventional = E * (2 * sum(sizes) + 2 * n_clusters) * transfer_cost
    return float(raftfed), float(conventional)


def probe_traffic_bounds(m: int, eps2: float) -> tuple[float, float]:
    """(best, worst) distribution-probe traffic for clustering ``m`` vehicles."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return (m - 1) * eps2, m * (m - 1) * eps2 / 2


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named phase of a run, derived from the root seed."""
    return np.random.default_rng([int(seed) % 2**64, zlib.crc32(name.encode())])
