"""Candidate/follower elections for intra-cluster and global aggregation nodes.

Both procedures run in rounds. Every node independently decides whether to
stand; candidates broadcast a heartbeat, followers vote, candidates exchange
their counts, and a candidate holding a strict majority of all participants
announces itself. A round without such a candidate is discarded and
participation is drawn again.
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .simnet import CostClass, Kind, Message, Network

DEFAULT_ROUND_LIMIT = 1000


class Role(str, enum.Enum):
    FOLLOWER = "Follower"
    CANDIDATE = "Candidate"
    LEADER = "Leader"


class ElectionFailure(RuntimeError):
    def __init__(self, rounds: int, trace: list | None = None):
        super().__init__(f"no candidate reached a strict majority within {rounds} rounds")
        self.rounds = rounds
        self.trace = trace or []


@dataclass
class RoundRecord:
    round: int
    candidates: list[int]
    tallies: dict[int, int]
    winner: int | None

    def to_json(self) -> str:
        return json.dumps({
            "round": self.round,
            "candidates": self.candidates,
            "tallies": {str(k): v for k, v in self.tallies.items()},
            "winner": self.winner,
        })


@dataclass
class ElectionOutcome:
    leader: int
    rounds: int
    vote_tally: dict[int, int]
    traffic_delta: dict[CostClass, int]
    roles: dict[int, Role] = field(default_factory=dict)
    trace: list[RoundRecord] = field(default_factory=list)


def majority_threshold(n: int) -> int:
    """Smallest tally strictly greater than n/2."""
    if n < 1:
        raise ValueError(f"majority threshold needs n >= 1, got {n}")
    return n // 2 + 1


def decide_participation(rng: np.random.Generator, p_join: float) -> Role:
    if not 0.0 <= p_join <= 1.0:
        raise ValueError(f"p_join must lie in [0, 1], got {p_join}")
    return Role.CANDIDATE if rng.random() < p_join else Role.FOLLOWER


def _draw_roles(ids: np.ndarray, p_join: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    # vectorised decide_participation: one uniform draw per node, in id order
    mask = rng.random(len(ids)) < p_join
    return ids[mask], ids[~mask]


def _first_heartbeat_votes(net: Network, start: int, order: list[int], followers: list[int]) -> dict[int, int]:
    """Map each follower to the candidate whose heartbeat reached it first."""
    if not net.record:
        # every candidate broadcasts to all other nodes, so the first sender's
        # heartbeat precedes all others at every follower
        return dict.fromkeys(followers, order[0])
    pending = set(followers)
    votes: dict[int, int] = {}
    for msg in net.log[start:]:
        if not pending:
            break
        if msg.kind in (Kind.HEARTBEAT, Kind.HEARTBEAT_WITH_DATA_SIZE) and msg.dst in pending:
            votes[msg.dst] = msg.src
            pending.discard(msg.dst)
    return votes


def _largest_share_votes(shared_sizes: Mapping[int, int], order: list[int], followers: list[int]) -> dict[int, int]:
    # ties on size go to the lowest id
    best = min(order, key=lambda c: (-shared_sizes[c], c))
    return dict.fromkeys(followers, best)


def _run(nodes: Sequence[int], p_join: float, rng: np.random.Generator, net: Network | None,
         round_limit: int, shared_sizes: Mapping[int, int] | None, keep_trace: bool) -> ElectionOutcome:
    if not 0.0 <= p_join <= 1.0:
        raise ValueError(f"p_join must lie in [0, 1], got {p_join}")
    ids = np.array(sorted(int(n) for n in nodes), dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("an election needs at least one node")
    if len(set(ids.tolist())) != len(ids):
        raise ValueError("duplicate node ids")
    if net is None:
        net = Network(ids.tolist(), record=False)
    missing = set(ids.tolist()) - net.nodes
    if missing:
        raise ValueError(f"nodes {sorted(missing)} are not attached to the network")

    n = len(ids)
    need = majority_threshold(n)
    all_ids = ids.tolist()
    heartbeat = Kind.HEARTBEAT if shared_sizes is None else Kind.HEARTBEAT_WITH_DATA_SIZE
    before = net.ledger.snapshot()
    trace: list[RoundRecord] = []

    for rnd in range(1, round_limit + 1):
        cand_arr, foll_arr = _draw_roles(ids, p_join, rng)
        if len(cand_arr) == 0:
            if keep_trace:
                trace.append(RoundRecord(rnd, [], {}, None))
            continue
        candidates = cand_arr.tolist()
        followers = foll_arr.tolist()
        # per-node send jitter fixes the global delivery order of heartbeats
        order = cand_arr[rng.permutation(len(cand_arr))].tolist()

        start = len(net.log)
        if not net.record:
            # membership was checked up front; count without materialising
            net.ledger.record(heartbeat, len(order) * (n - 1))
            net.sent += len(order) * (n - 1)
        elif shared_sizes is None:
            net.fanout(heartbeat, order, all_ids)
        else:
            for c in order:
                net.broadcast(heartbeat, c, [i for i in all_ids if i != c], payload=shared_sizes[c])

        if shared_sizes is None:
            votes = _first_heartbeat_votes(net, start, order, followers)
        else:
            votes = _largest_share_votes(shared_sizes, order, followers)

        tally = dict.fromkeys(candidates, 1)  # self-vote
        for c, k in Counter(votes.values()).items():
            tally[c] += k
        if net.record:
            for f in followers:
                choice = votes[f]
                net.send(Message(Kind.PRO_VOTE, f, choice))
                for c in candidates:
                    if c != choice:
                        net.send(Message(Kind.ANTI_VOTE, f, c))
            for a in candidates:
                for b in candidates:
                    if a != b:
                        net.send(Message(Kind.COUNT_EXCHANGE, a, b, payload=tally[a]))
        else:
            k, f = len(candidates), len(followers)
            net.ledger.record(Kind.PRO_VOTE, f)
            net.ledger.record(Kind.ANTI_VOTE, f * (k - 1))
            net.ledger.record(Kind.COUNT_EXCHANGE, k * (k - 1))
            net.sent += f * k + k * (k - 1)

        top = max(tally, key=tally.__getitem__)
        winner = top if tally[top] >= need else None
        if keep_trace:
            trace.append(RoundRecord(rnd, sorted(candidates), dict(sorted(tally.items())), winner))
        if winner is None:
            continue

        net.fanout(Kind.LEADER_ANNOUNCE, [winner], all_ids)
        roles = {i: Role.FOLLOWER for i in all_ids}
        roles.update({c: Role.CANDIDATE for c in candidates})
        roles[winner] = Role.LEADER
        return ElectionOutcome(
            leader=winner,
            rounds=rnd,
            vote_tally=dict(sorted(tally.items())),
            traffic_delta=net.ledger.delta(before),
            roles=roles,
            trace=trace,
        )
    raise ElectionFailure(round_limit, trace)


def run_leader_election(nodes: Sequence[int], p_join: float, rng: np.random.Generator,
                        net: Network | None = None, round_limit: int = DEFAULT_ROUND_LIMIT,
                        keep_trace: bool = True) -> ElectionOutcome:
    """Elect one node; followers vote for the first heartbeat they receive."""
    return _run(nodes, p_join, rng, net, round_limit, None, keep_trace)


def run_global_election(heads: Sequence[int], shared_sizes: Mapping[int, int], p_join: float,
                        rng: np.random.Generator, net: Network | None = None,
                        round_limit: int = DEFAULT_ROUND_LIMIT, keep_trace: bool = True) -> ElectionOutcome:
    """Elect the global aggregation node among cluster heads.

    Candidates advertise their non-sensitive pool size with the heartbeat and
    followers vote for the largest one.
    """
    missing = [h for h in heads if h not in shared_sizes]
    if missing:
        raise ValueError(f"no shared size for heads {missing}")
    if any(int(v) < 0 for v in shared_sizes.values()):
        raise ValueError("shared sizes must be non-negative")
    sizes = {int(k): int(v) for k, v in shared_sizes.items()}
    return _run(heads, p_join, rng, net, round_limit, sizes, keep_trace)
