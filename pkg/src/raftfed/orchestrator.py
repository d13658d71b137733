"""End-to-end RaftFed run: clustering/election phase, pre-training and relay training."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .clustering import Cluster, dynamic_cluster
from .config import ExperimentConfig
from .data import LabeledDataset, PartitionSpec, extract_shared_pool, load_idx, partition_noniid, synth_blobs
from .election import ElectionOutcome, Role, run_global_election, run_leader_election
from .model import HyperParams, ModelParams, NumericError, evaluate, init_model, local_train, weighted_merge
from .simnet import CostClass, Kind, Message, Network, TrafficLedger, substream

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


class DivergenceError(NumericError):
    def __init__(self, round_idx: int, detail: str):
        super().__init__(f"training diverged in round {round_idx}: {detail}")
        self.round = round_idx


@dataclass
class VehicleNode:
    id: int
    data: LabeledDataset
    allowed: frozenset[int] = frozenset()
    private: bool = True
    role: Role = Role.FOLLOWER

    @property
    def labels(self) -> frozenset[int]:
        return self.data.label_set if len(self.data) else self.allowed


@dataclass
class RoundMetrics:
    round: int
    accuracy: float
    loss: float
    ledger: dict[CostClass, int]
    total_cost: float

    def row(self) -> list:
        return [
            self.round,
            f"{self.accuracy:.6f}",
            f"{self.loss:.6f}",
            self.ledger[CostClass.MODEL_TRANSFER],
            self.ledger[CostClass.HEARTBEAT],
            self.ledger[CostClass.PROBE],
            f"{self.total_cost:.6f}",
        ]


METRIC_COLUMNS = ["round", "accuracy", "loss", "transfers", "heartbeats", "probe_msgs", "total_cost"]


@dataclass
class ExperimentState:
    nodes: dict[int, VehicleNode]
    clusters: list[Cluster]
    global_node: int
    leader: int
    net: Network
    shared_pool: LabeledDataset
    params: ModelParams | None = None  # global model
    cluster_order: list[int] = field(default_factory=list)
    round_metrics: list[RoundMetrics] = field(default_factory=list)
    initial_metrics: RoundMetrics | None = None
    elections: dict[str, ElectionOutcome] = field(default_factory=dict)
    test_set: LabeledDataset | None = None

    @property
    def ledger(self) -> TrafficLedger:
        return self.net.ledger


@dataclass
class Streams:
    """Named random streams derived from one root seed."""
    seed: int

    def __post_init__(self):
        self._cache: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        if name not in self._cache:
            self._cache[name] = substream(self.seed, name)
        return self._cache[name]


def default_privacy(clusters: list[Cluster]) -> dict[int, bool]:
    """Lowest id in each cluster is the non-private node; everyone else is private."""
    flags = {}
    for cl in clusters:
        public = min(cl.members)
        for m in cl.members:
            flags[m] = m != public
    return flags


def setup_phase(nodes: Mapping[int, VehicleNode], cfg: ExperimentConfig, streams: Streams,
                net: Network | None = None) -> ExperimentState:
    nodes = dict(sorted(nodes.items()))
    if not nodes:
        raise ValueError("setup needs at least one node")
    if net is None:
        net = Network(nodes, TrafficLedger({CostClass(k): v for k, v in cfg.unit_costs.items()}))
    rng = streams["election"]

    leader_vote = run_leader_election(list(nodes), cfg.p_join, rng, net, cfg.round_limit)
    clusters = dynamic_cluster({i: n.labels for i, n in nodes.items()}, cfg.r_threshold, rng, net,
                               cfg.p_join, cfg.overlap_mode, cfg.round_limit, leader=leader_vote.leader)

    flags = default_privacy(clusters)
    if cfg.private is not None:
        flags.update(cfg.private)
    for i, node in nodes.items():
        node.private = flags.get(i, True)

    shares, rest = extract_shared_pool({i: n.data for i, n in nodes.items()},
                                       {i: n.private for i, n in nodes.items()},
                                       cfg.share_ratio, streams["pool"])
    features = next(iter(nodes.values())).data.inputs.shape[1]
    pools = {}
    for k, cl in enumerate(clusters):
        for m in cl.members:
            nodes[m].data = rest[m]
            if len(shares[m]) and m != cl.head:
                net.send(Message(Kind.DATA_SHARE, m, cl.head, payload=len(shares[m])))
        pools[cl.head] = LabeledDataset.concat([shares[m] for m in cl.members], features)
        cl.shared_pool_size = len(pools[cl.head])
        cl.sample_count = sum(len(rest[m]) for m in cl.members)

    heads = [cl.head for cl in clusters]
    global_vote = run_global_election(heads, {h: len(pools[h]) for h in heads}, cfg.p_join, rng, net,
                                      cfg.round_limit)
    g = global_vote.leader
    for cl in clusters:
        if cl.head != g:
            # pooled non-sensitive data and the cluster's sample count
            net.send(Message(Kind.DATA_SHARE, cl.head, g, payload=(cl.shared_pool_size, cl.sample_count)))

    for i, node in nodes.items():
        node.role = Role.FOLLOWER
    for h in heads:
        nodes[h].role = Role.LEADER
    shared = LabeledDataset.concat([pools[h] for h in heads], features)
    log.info("setup: %d clusters, leader %d, global node %d, shared pool %d samples",
             len(clusters), leader_vote.leader, g, len(shared))
    return ExperimentState(
        nodes=nodes,
        clusters=clusters,
        global_node=g,
        leader=leader_vote.leader,
        net=net,
        shared_pool=shared,
        cluster_order=list(range(len(clusters))),
        elections={"leader": leader_vote, "global": global_vote},
    )


def pretrain(initial: ModelParams, shared_pool: LabeledDataset, pretrain_rounds: int, hyper: HyperParams,
             rng: np.random.Generator) -> ModelParams:
    """Train the initial global model on the pooled non-sensitive data."""
    if pretrain_rounds < 0:
        raise ValueError("pretrain_rounds must be >= 0")
    if pretrain_rounds == 0 or len(shared_pool) == 0:
        return initial
    return local_train(initial, shared_pool, pretrain_rounds, hyper.lr, hyper.batch_size, rng)


def intra_cluster_round(cluster: Cluster, params: ModelParams, hyper: HyperParams, order: list[int],
                        nodes: Mapping[int, VehicleNode], net: Network, rng: np.random.Generator) -> ModelParams:
    """Relay the model through every member ``intra_rounds`` times.

    Each member trains locally, smooths the result toward the parameters it
    received with weight |D_k|/|D|, and forwards to the next member (the last
    member hands back to the first). One transfer per hop.
    """
    if sorted(order) != sorted(cluster.members):
        raise ValueError("relay order must cover the cluster members exactly once")
    total = cluster.sample_count
    theta = params
    for _ in range(hyper.intra_rounds):
        for j, v in enumerate(order):
            data = nodes[v].data
            received = theta
            if len(data) and hyper.local_epochs > 0:
                trained = local_train(received, data, hyper.local_epochs, hyper.lr, hyper.batch_size, rng)
                theta = weighted_merge(trained, received, len(data) / total if total else 0.0)
            net.send(Message(Kind.MODEL_TRANSFER, v, order[(j + 1) % len(order)]))
    return theta


def global_round(state: ExperimentState, hyper: HyperParams, t: int, rng: np.random.Generator) -> ExperimentState:
    """One loop over all clusters, then the global update.

    Every cluster starts from the previous global model. After a cluster
    finishes, its head hands the model on (to the next cluster's head, the last
    one to the global node) and the global model absorbs it with weight
    |D^_k|/|D^|, each merge taken against the previous global model.
    """
    prev = state.params
    grand_total = sum(cl.sample_count for cl in state.clusters)
    acc = prev.values.copy()
    for pos, k in enumerate(state.cluster_order):
        cl = state.clusters[k]
        theta = intra_cluster_round(cl, prev, hyper, cl.relay_order(), state.nodes, state.net, rng)
        nxt = (state.clusters[state.cluster_order[pos + 1]].head if pos + 1 < len(state.cluster_order)
               else state.global_node)
        state.net.send(Message(Kind.MODEL_TRANSFER, cl.head, nxt))
        weight = cl.sample_count / grand_total if grand_total else 0.0
        acc += weighted_merge(theta, prev, weight).values - prev.values
    if not np.all(np.isfinite(acc)):
        raise DivergenceError(t, "non-finite global parameters")
    state.params = ModelParams(acc, prev.shape)
    state.round_metrics.append(_measure(state, t))
    return state


def _measure(state: ExperimentState, t: int) -> RoundMetrics:
    acc, loss = evaluate(state.params, state.test_set)
    if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
        raise DivergenceError(t, f"test loss {loss:g}")
    return RoundMetrics(t, acc, loss, state.ledger.snapshot(), state.ledger.total())


def load_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Training source and held-out test set for ``cfg``."""
    if cfg.dataset == "mnist":
        return (load_idx(cfg.mnist_train_images, cfg.mnist_train_labels),
                load_idx(cfg.mnist_test_images, cfg.mnist_test_labels))
    per_class = cfg.synth_n_per_class + cfg.synth_test_per_class
    full = synth_blobs(per_class, cfg.synth_classes, cfg.synth_features, cfg.synth_spread, cfg.seed,
                       cfg.synth_min_separation)
    # first block of each class trains, the rest is held out
    within = np.tile(np.arange(per_class), cfg.synth_classes)
    train = full.subset(np.flatnonzero(within < cfg.synth_n_per_class))
    test = full.subset(np.flatnonzero(within >= cfg.synth_n_per_class))
    return train, test


def hyper_from_config(cfg: ExperimentConfig) -> HyperParams:
    return HyperParams(lr=cfg.learning_rate, local_epochs=cfg.local_epochs, rounds=cfg.rounds,
                       pretrain_rounds=cfg.pretrain_rounds, intra_rounds=cfg.intra_rounds,
                       batch_size=cfg.batch_size, share_ratio=cfg.share_ratio)


def build_nodes(cfg: ExperimentConfig, train: LabeledDataset, streams: Streams) -> dict[int, VehicleNode]:
    spec = PartitionSpec(cfg.label_spec, cfg.share_ratio)
    parts = partition_noniid(train, spec, streams["partition"])
    return {i: VehicleNode(i, parts[i], spec.allowed[i]) for i in sorted(parts)}


def run_raftfed(cfg: ExperimentConfig, datasets: tuple[LabeledDataset, LabeledDataset] | None = None,
                callback=None) -> ExperimentState:
    """Setup, pre-training and ``cfg.rounds`` global rounds; deterministic per ``cfg.seed``."""
    streams = Streams(cfg.seed)
    train, test = datasets if datasets is not None else load_datasets(cfg)
    hyper = hyper_from_config(cfg)
    nodes = build_nodes(cfg, train, streams)
    state = setup_phase(nodes, cfg, streams)
    state.test_set = test

    classes = int(max(train.labels.max(), test.labels.max())) + 1
    shape = [train.inputs.shape[1], *cfg.hidden_layers, classes]
    initial = init_model(shape, streams["init"])
    state.params = pretrain(initial, state.shared_pool, hyper.pretrain_rounds, hyper, streams["pretrain"])
    state.initial_metrics = _measure(state, 0)
    if callback:
        callback(state.initial_metrics)

    rng = streams["train"]
    for t in range(1, hyper.rounds + 1):
        global_round(state, hyper, t, rng)
        if callback:
            callback(state.round_metrics[-1])
    return state
