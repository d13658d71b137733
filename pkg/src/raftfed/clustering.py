"""Dynamic clustering of vehicles by label-distribution overlap."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .election import DEFAULT_ROUND_LIMIT, run_leader_election
from .simnet import Kind, Message, Network

OVERLAP_MODES = ("intersection", "count_ratio")


@dataclass
class Cluster:
    head: int
    members: list[int]
    sample_count: int = 0
    shared_pool_size: int = 0

    def __post_init__(self):
        if self.head not in self.members:
            raise ValueError(f"head {self.head} must be a member")
        if len(set(self.members)) != len(self.members):
            raise ValueError("cluster members must be distinct")

    @property
    def size(self) -> int:
        return len(self.members)

    def relay_order(self) -> list[int]:
        """Head first, then the remaining members by ascending id."""
        return [self.head] + sorted(m for m in self.members if m != self.head)

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "members": list(self.members),
            "sample_count": self.sample_count,
            "shared_pool_size": self.shared_pool_size,
        }


def overlap_rate(node: Iterable[int], head: Iterable[int], mode: str = "intersection") -> float:
    """Share of the head's labels that the node also holds.

    ``mode="count_ratio"`` instead returns the plain ratio of label counts,
    which is not bounded by 1.
    """
    node, head = frozenset(node), frozenset(head)
    if not head:
        raise ValueError("head label set is empty")
    if mode == "intersection":
        return len(node & head) / len(head)
    if mode == "count_ratio":
        return len(node) / len(head)
    raise ValueError(f"unknown overlap mode {mode!r}; expected one of {OVERLAP_MODES}")


def dynamic_cluster(labels: dict[int, Iterable[int]], r_threshold: float, rng: np.random.Generator,
                    net: Network | None = None, p_join: float = 0.5, mode: str = "intersection",
                    round_limit: int = DEFAULT_ROUND_LIMIT, leader: int | None = None) -> list[Cluster]:
    """Partition nodes into clusters around heads with similar label sets.

    An initial leader is elected among all nodes and heads the first cluster.
    Every other node, in ascending id order, probes the existing heads in
    creation order and joins the first whose overlap reaches ``r_threshold``;
    if none does, it founds a new cluster. Each probe is one message.

    Pass ``leader`` to reuse an election that has already been held.
    """
    if not 0.0 <= r_threshold <= 1.0 and mode == "intersection":
        raise ValueError(f"r_threshold must lie in [0, 1], got {r_threshold}")
    label_sets = {int(k): frozenset(v) for k, v in labels.items()}
    if not label_sets:
        raise ValueError("clustering needs at least one node")
    ids = sorted(label_sets)
    if net is None:
        net = Network(ids, record=False)

    if leader is None:
        leader = run_leader_election(ids, p_join, rng, net, round_limit).leader
    elif leader not in label_sets:
        raise ValueError(f"leader {leader} is not among the nodes")
    clusters = [Cluster(head=leader, members=[leader])]
    for v in ids:
        if v == leader:
            continue
        for cl in clusters:
            net.send(Message(Kind.DISTRIBUTION_PROBE, v, cl.head, payload=sorted(label_sets[v])))
            if overlap_rate(label_sets[v], label_sets[cl.head], mode) >= r_threshold:
                cl.members.append(v)
                break
        else:
            clusters.append(Cluster(head=v, members=[v]))
    return clusters


def clusters_to_json(clusters: Sequence[Cluster], **kw) -> str:
    return json.dumps([c.to_dict() for c in clusters], **kw)


def clusters_from_json(text: str) -> list[Cluster]:
    return [Cluster(**d) for d in json.loads(text)]
