import itertools
import json

import numpy as np
import pytest

from raftfed.election import (
    ElectionFailure,
    Role,
    decide_participation,
    majority_threshold,
    run_global_election,
    run_leader_election,
)
from raftfed.simnet import CostClass, Kind, Network


class ScriptedRng:
    """Stands in for a Generator: each round's candidate set is given explicitly."""

    def __init__(self, ids, rounds):
        self.ids = sorted(ids)
        self.rounds = list(rounds)

    def random(self, n):
        cands = self.rounds.pop(0)
        return np.array([0.0 if i in cands else 1.0 for i in self.ids])

    def permutation(self, n):
        return np.arange(n)


@pytest.mark.parametrize("n,need", [(10, 6), (1, 1), (7, 4), (2, 2)])
def test_majority_threshold(n, need):
    assert majority_threshold(n) == need


def test_majority_threshold_domain():
    with pytest.raises(ValueError):
        majority_threshold(0)


def test_participation_boundaries():
    rng = np.random.default_rng(0)
    assert all(decide_participation(rng, 0.0) is Role.FOLLOWER for _ in range(100))
    assert all(decide_participation(rng, 1.0) is Role.CANDIDATE for _ in range(100))
    with pytest.raises(ValueError):
        decide_participation(rng, -0.1)


def test_participation_frequency():
    rng = np.random.default_rng(1)
    frac = np.mean([decide_participation(rng, 0.5) is Role.CANDIDATE for _ in range(10_000)])
    assert abs(frac - 0.5) < 0.02


def test_singleton_wins_with_self_vote():
    out = run_leader_election([7], 1.0, np.random.default_rng(0))
    assert out.leader == 7 and out.rounds == 1 and out.vote_tally == {7: 1}


def test_unanimous_single_candidate():
    ids = list(range(10))
    net = Network(ids)
    out = run_leader_election(ids, 0.5, ScriptedRng(ids, [{4}]), net)
    assert out.leader == 4 and out.rounds == 1 and out.vote_tally == {4: 10}
    assert net.ledger.counts[CostClass.HEARTBEAT] > 0
    assert sum(m.kind is Kind.LEADER_ANNOUNCE for m in net.log) == 9


def test_forced_high_participation_fails():
    ids = list(range(100))
    with pytest.raises(ElectionFailure) as exc:
        run_leader_election(ids, 0.7, np.random.default_rng(3), round_limit=50)
    assert exc.value.rounds == 50
    for rec in exc.value.trace:
        # tally bound: one self vote plus every follower
        if len(rec.candidates) >= 51:
            assert max(rec.tallies.values()) <= 1 + (100 - len(rec.candidates)) < 51


def test_no_candidates_retries():
    ids = [0, 1, 2]
    out = run_leader_election(ids, 0.5, ScriptedRng(ids, [set(), set(), {2}]))
    assert out.rounds == 3 and out.leader == 2
    assert [r.winner for r in out.trace] == [None, None, 2]


def test_p_zero_never_succeeds():
    with pytest.raises(ElectionFailure):
        run_leader_election(range(5), 0.0, np.random.default_rng(0), round_limit=20)


def test_first_heartbeat_gets_the_follower_votes():
    ids = list(range(6))
    net = Network(ids)
    out = run_leader_election(ids, 0.5, ScriptedRng(ids, [{3, 1}]), net)
    # jitter order is the identity here, so candidate 1 broadcasts first
    assert out.leader == 1
    assert out.vote_tally == {1: 5, 3: 1}
    pro = [m for m in net.log if m.kind is Kind.PRO_VOTE]
    assert {m.src for m in pro} == {0, 2, 4, 5} and {m.dst for m in pro} == {1}


@pytest.mark.parametrize("seed", range(5))
def test_record_and_bulk_modes_agree(seed):
    ids = list(range(12))
    a, b = Network(ids), Network(ids, record=False)
    ra = run_leader_election(ids, 0.4, np.random.default_rng(seed), a)
    rb = run_leader_election(ids, 0.4, np.random.default_rng(seed), b)
    assert (ra.leader, ra.rounds, ra.vote_tally) == (rb.leader, rb.rounds, rb.vote_tally)
    assert a.ledger.counts == b.ledger.counts
    assert a.sent == b.sent


def test_trace_is_json_lines():
    out = run_leader_election(range(10), 0.5, np.random.default_rng(4))
    for rec in out.trace:
        d = json.loads(rec.to_json())
        assert set(d) == {"round", "candidates", "tallies", "winner"}
    assert out.trace[-1].winner == out.leader


def test_global_all_candidates_deadlock():
    heads = {0: 100, 1: 10, 2: 10}
    rng = ScriptedRng(heads, [{0, 1, 2}, {0}])
    out = run_global_election(list(heads), heads, 0.5, rng)
    assert out.rounds == 2 and out.leader == 0
    assert out.trace[0].tallies == {0: 1, 1: 1, 2: 1} and out.trace[0].winner is None


def test_global_two_nodes():
    heads = {0: 100, 1: 10}
    out = run_global_election(list(heads), heads, 0.5, ScriptedRng(heads, [{0}]))
    assert out.leader == 0 and out.vote_tally == {0: 2}


def test_global_votes_for_largest_pool():
    heads = {0: 50, 1: 40, 2: 30, 3: 20, 4: 10}
    net = Network(heads)
    out = run_global_election(list(heads), heads, 0.5, ScriptedRng(heads, [{1, 2}]), net)
    assert out.leader == 1 and out.vote_tally == {1: 4, 2: 1}
    assert net.ledger.counts[CostClass.HEARTBEAT] > 0
    assert any(m.kind is Kind.HEARTBEAT_WITH_DATA_SIZE and m.payload == 40 for m in net.log)


def test_global_tie_breaks_on_lowest_id():
    heads = {0: 0, 1: 0, 2: 0}
    out = run_global_election(list(heads), heads, 0.5, ScriptedRng(heads, [{2, 1}]))
    assert out.leader == 1


def test_global_missing_size_rejected():
    with pytest.raises(ValueError):
        run_global_election([0, 1], {0: 3}, 0.5, np.random.default_rng(0))


@pytest.mark.parametrize("n", range(1, 7))
def test_global_preference_brute_force(n):
    rng = np.random.default_rng(n)
    heads = list(range(n))
    for _ in range(5):
        sizes = dict(zip(heads, rng.integers(0, 20, n).tolist()))
        for k in range(1, n + 1):
            for cands in itertools.combinations(heads, k):
                top = max(sizes[c] for c in cands)
                leaders = [c for c in cands if sizes[c] == top]
                followers = n - k
                out_rng = ScriptedRng(heads, [set(cands)] + [set(cands[:1])] * 1000)
                try:
                    out = run_global_election(heads, sizes, 0.5, out_rng, round_limit=2)
                except ElectionFailure:
                    out = None
                if len(leaders) == 1 and 1 + followers >= majority_threshold(n):
                    assert out is not None and out.rounds == 1 and out.leader == leaders[0]
                if 1 + followers < majority_threshold(n):
                    assert out is None or out.rounds > 1


def test_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        run_leader_election([], 0.5, rng)
    with pytest.raises(ValueError):
        run_leader_election([1, 1], 0.5, rng)
    with pytest.raises(ValueError):
        run_leader_election([0, 1], 1.5, rng)
    with pytest.raises(ValueError):
        run_leader_election([0, 5], 0.5, rng, Network([0, 1]))
