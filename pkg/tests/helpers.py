"""Shared builders for tests that need a hand-made experiment state."""
import numpy as np

from raftfed.clustering import Cluster
from raftfed.data import LabeledDataset
from raftfed.model import HyperParams, init_model
from raftfed.orchestrator import ExperimentState, VehicleNode
from raftfed.simnet import Network


def fixed_state(cluster_sizes, samples_per_node=4, seed=0, features=2, classes=2):
    """Clusters of the given sizes over consecutive ids; the first head is the global node."""
    rng = np.random.default_rng(seed)
    nodes, clusters, nid = {}, [], 0
    for c in cluster_sizes:
        ids = list(range(nid, nid + c))
        nid += c
        for i in ids:
            data = LabeledDataset(rng.normal(size=(samples_per_node, features)),
                                  rng.integers(0, classes, samples_per_node))
            nodes[i] = VehicleNode(i, data)
        clusters.append(Cluster(ids[0], ids, sample_count=c * samples_per_node))
    test = LabeledDataset(rng.normal(size=(10, features)), rng.integers(0, classes, 10))
    return ExperimentState(
        nodes=nodes, clusters=clusters, global_node=clusters[0].head, leader=clusters[0].head,
        net=Network(nodes), shared_pool=LabeledDataset(np.zeros((0, features)), np.zeros(0, int)),
        params=init_model([features, 3, classes], seed), cluster_order=list(range(len(clusters))),
        test_set=test,
    )


def quick_hyper(**kw):
    base = dict(lr=0.05, local_epochs=1, rounds=1, pretrain_rounds=0, intra_rounds=1, batch_size=4)
    base.update(kw)
    return HyperParams(**base)
