"""Datasets: synthetic blobs, MNIST IDX files, non-IID partitioning and the shared pool."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# client id -> labels it trains on (MNIST non-IID split)
CLIENT_LABELS: dict[int, frozenset[int]] = {
    0: frozenset({0, 4, 6, 8, 9}),
    1: frozenset({1, 4, 5, 6}),
    2: frozenset({0, 6, 7, 9}),
    3: frozenset({0, 1, 2, 9}),
    4: frozenset({1, 2, 4, 8}),
    5: frozenset({3}),
    6: frozenset({2, 3, 5}),
    7: frozenset({3, 5}),
    8: frozenset({7, 8}),
    9: frozenset({7}),
}


class IDXFormatError(ValueError):
    pass


class UnassignableLabelError(ValueError):
    pass


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    provenance: str = "synthetic"
    index: np.ndarray | None = None  # row ids in the source dataset

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("inputs must be n x features and labels a length-n vector")
        if self.index is None:
            self.index = np.arange(len(self.labels))
        self.index = np.asarray(self.index, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def label_set(self) -> frozenset[int]:
        return frozenset(np.unique(self.labels).tolist())

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.inputs[rows], self.labels[rows], self.provenance, self.index[rows])

    @classmethod
    def concat(cls, parts, features: int | None = None) -> "LabeledDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros((0, features or 0)), np.zeros(0, dtype=np.int64))
        return cls(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].provenance,
            np.concatenate([p.index for p in parts]),
        )


@dataclass
class PartitionSpec:
    allowed: dict[int, frozenset[int]]
    share_ratio: float = 0.05
    private: dict[int, bool] = field(default_factory=dict)

    def __post_init__(self):
        self.allowed = {int(k): frozenset(int(l) for l in v) for k, v in self.allowed.items()}
        for k, v in self.allowed.items():
            if not v:
                raise ValueError(f"node {k} has no allowed labels")
        if not 0.0 <= self.share_ratio <= 1.0:
            raise ValueError(f"share_ratio must lie in [0, 1], got {self.share_ratio}")

    @classmethod
    def client_labels(cls, share_ratio: float = 0.05) -> "PartitionSpec":
        return cls(dict(CLIENT_LABELS), share_ratio)


def partition_noniid(dataset: LabeledDataset, spec: PartitionSpec | Mapping[int, frozenset],
                     rng: np.random.Generator) -> dict[int, LabeledDataset]:
    """Send every sample to one node, drawn uniformly among the nodes allowed its label."""
    allowed = spec.allowed if isinstance(spec, PartitionSpec) else {int(k): frozenset(v) for k, v in spec.items()}
    nodes = sorted(allowed)
    holders = {}
    for label in np.unique(dataset.labels).tolist():
        holders[label] = [n for n in nodes if label in allowed[n]]
        if not holders[label]:
            raise UnassignableLabelError(f"label {label} is allowed on no node")
    owner = np.empty(len(dataset), dtype=np.int64)
    for label, hs in holders.items():
        rows = np.flatnonzero(dataset.labels == label)
        owner[rows] = np.asarray(hs)[rng.integers(0, len(hs), size=len(rows))]
    return {n: dataset.subset(np.flatnonzero(owner == n)) for n in nodes}


def extract_shared_pool(partitions: Mapping[int, LabeledDataset], private: Mapping[int, bool],
                        share_ratio: float, rng: np.random.Generator
                        ) -> tuple[dict[int, LabeledDataset], dict[int, LabeledDataset]]:
    """Move floor(share_ratio * n) random samples out of each non-private node.

    Returns ``(shares, remainders)`` keyed by node; private nodes have empty shares.
    Nodes missing from ``private`` are treated as private.
    """
    if not 0.0 <= share_ratio <= 1.0:
        raise ValueError(f"share_ratio must lie in [0, 1], got {share_ratio}")
    shares, rest = {}, {}
    for node in sorted(partitions):
        part = partitions[node]
        k = 0 if private.get(node, True) else int(np.floor(share_ratio * len(part) + 1e-9))
        perm = rng.permutation(len(part))
        shares[node] = part.subset(np.sort(perm[:k]))
        rest[node] = part.subset(np.sort(perm[k:]))
    return shares, rest


def synth_blobs(n_per_class: int, classes: int, features: int, spread: float, seed: int,
                min_separation: float = 1.0) -> LabeledDataset:
    """Balanced isotropic Gaussian blobs around seeded class centres.

    Centres are drawn uniformly from a box and redrawn until every pair is at
    least ``min_separation`` apart, so a fixed spread gives similar difficulty
    across seeds.
    """
    if classes < 2 or features < 1:
        raise ValueError("need classes >= 2 and features >= 1")
    rng = np.random.default_rng(seed)
    centers = blob_centers(classes, features, rng, min_separation)
    X = np.concatenate([c + spread * rng.standard_normal((n_per_class, features)) for c in centers])
    y = np.repeat(np.arange(classes), n_per_class)
    return LabeledDataset(X, y, "synthetic")


def blob_centers(classes: int, features: int, rng: np.random.Generator, min_separation: float = 1.0) -> np.ndarray:
    side = max(1.0, min_separation * classes ** (1.0 / features))
    for _ in range(10_000):
        c = rng.uniform(-side, side, size=(classes, features))
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        if d[np.triu_indices(classes, 1)].min() >= min_separation:
            return c
    raise RuntimeError("could not place well-separated centres")


def nearest_centroid_accuracy(train: LabeledDataset, test: LabeledDataset) -> float:
    classes = np.unique(train.labels)
    cents = np.stack([train.inputs[train.labels == c].mean(axis=0) for c in classes])
    d = ((test.inputs[:, None, :] - cents[None]) ** 2).sum(-1)
    return float(np.mean(classes[d.argmin(axis=1)] == test.labels))


def _open(path):
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    img = _open(images_path)
    lab = _open(labels_path)
    if len(img) < 16:
        raise IDXFormatError("images: header truncated")
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IDXFormatError(f"images: magic {magic:#010x} != {IDX_IMAGES_MAGIC:#010x}")
    if len(lab) < 8:
        raise IDXFormatError("labels: header truncated")
    lmagic, n_lab = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise IDXFormatError(f"labels: magic {lmagic:#010x} != {IDX_LABELS_MAGIC:#010x}")
    if n_img != n_lab:
        raise IDXFormatError(f"count mismatch: images header says {n_img}, labels header says {n_lab}")
    if len(img) - 16 != n_img * rows * cols:
        raise IDXFormatError(f"images: count mismatch, header promises {n_img} images, "
                             f"body holds {(len(img) - 16) / (rows * cols):g}")
    if len(lab) - 8 != n_lab:
        raise IDXFormatError(f"labels: count mismatch, header promises {n_lab} labels, body holds {len(lab) - 8}")
    X = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n_img, rows * cols) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    return LabeledDataset(X, y, "mnist")


def write_idx(dataset_images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n x rows x cols) and labels as IDX files."""
    images = np.asarray(dataset_images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels))
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def partitions_to_json(partitions: Mapping[int, LabeledDataset], **kw) -> str:
    return json.dumps({str(k): v.index.tolist() for k, v in sorted(partitions.items())}, **kw)
