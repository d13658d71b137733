"""Experiment configuration: defaults, file/flag layering and validation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data import CLIENT_LABELS
from .simnet import CostClass

MNIST_LR = 1e-5
SYNTHETIC_LR = 1e-2


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    mnist_train_images: str | None = None
    mnist_train_labels: str | None = None
    mnist_test_images: str | None = None
    mnist_test_labels: str | None = None
    # synthetic blobs
    synth_classes: int = 10
    synth_features: int = 2
    synth_n_per_class: int = 500
    synth_test_per_class: int = 100
    synth_spread: float = 0.35
    synth_min_separation: float = 1.0

    nodes: int = 10
    partition: dict[int, list[int]] | None = None
    private: dict[int, bool] | None = None
    r_threshold: float = 0.5
    overlap_mode: str = "intersection"
    p_join: float = 0.5
    round_limit: int = 1000

    lr: float | None = None
    local_epochs: int = 5
    rounds: int = 100
    pretrain_rounds: int = 50
    intra_rounds: int = 2
    batch_size: int = 20
    share_ratio: float = 0.05
    hidden: list[int] | None = None

    unit_costs: dict[str, float] = field(default_factory=lambda: {c.value: 1.0 for c in CostClass})
    seed: int = 0
    out: str = "runs/raftfed"

    def __post_init__(self):
        self.validate()

    # resolved views -------------------------------------------------------
    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return MNIST_LR if self.dataset == "mnist" else SYNTHETIC_LR

    @property
    def hidden_layers(self) -> list[int]:
        if self.hidden is not None:
            return list(self.hidden)
        return [128] if self.dataset == "mnist" else [32]

    @property
    def label_spec(self) -> dict[int, frozenset[int]]:
        if self.partition is not None:
            return {int(k): frozenset(v) for k, v in self.partition.items()}
        return dict(CLIENT_LABELS)

    def validate(self) -> None:
        for name in _FLOAT_FIELDS:
            v = getattr(self, name)
            if isinstance(v, str):  # YAML 1.1 reads "1e-2" as a string
                try:
                    setattr(self, name, float(v))
                except ValueError:
                    raise ConfigError(name, f"expected a number, got {v!r}") from None
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError("dataset", f"expected 'synthetic' or 'mnist', got {self.dataset!r}")
        if self.dataset == "mnist":
            for name in ("mnist_train_images", "mnist_train_labels", "mnist_test_images", "mnist_test_labels"):
                if not getattr(self, name):
                    raise ConfigError(name, "required when dataset is mnist")
        _int_at_least(self, "synth_classes", 2)
        _int_at_least(self, "synth_features", 1)
        _int_at_least(self, "synth_n_per_class", 1)
        _int_at_least(self, "synth_test_per_class", 1)
        _positive(self, "synth_spread", allow_zero=True)
        _positive(self, "synth_min_separation", allow_zero=True)
        _int_at_least(self, "nodes", 1)
        if self.partition is not None:
            try:
                self.partition = {int(k): sorted(int(l) for l in v) for k, v in self.partition.items()}
            except (TypeError, ValueError, AttributeError):
                raise ConfigError("partition", "expected a mapping node id -> list of labels") from None
            if len(self.partition) != self.nodes:
                raise ConfigError("partition", f"describes {len(self.partition)} nodes but nodes={self.nodes}")
            if any(not v for v in self.partition.values()):
                raise ConfigError("partition", "every node needs at least one label")
        elif self.nodes != len(CLIENT_LABELS):
            raise ConfigError("partition", f"required when nodes != {len(CLIENT_LABELS)} (default split covers 10 nodes)")
        if self.private is not None:
            try:
                self.private = {int(k): bool(v) for k, v in self.private.items()}
            except (TypeError, ValueError, AttributeError):
                raise ConfigError("private", "expected a mapping node id -> bool") from None
        _unit_interval(self, "r_threshold")
        if self.overlap_mode not in ("intersection", "count_ratio"):
            raise ConfigError("overlap_mode", "expected 'intersection' or 'count_ratio'")
        _unit_interval(self, "p_join")
        _int_at_least(self, "round_limit", 1)
        if self.lr is not None:
            _positive(self, "lr")
        _int_at_least(self, "local_epochs", 0)
        _int_at_least(self, "rounds", 0)
        _int_at_least(self, "pretrain_rounds", 0)
        _int_at_least(self, "intra_rounds", 1)
        _int_at_least(self, "batch_size", 1)
        _unit_interval(self, "share_ratio")
        if self.hidden is not None:
            if not isinstance(self.hidden, list) or any(not isinstance(h, int) or h < 1 for h in self.hidden):
                raise ConfigError("hidden", "expected a list of positive layer widths")
        costs = {c.value: 1.0 for c in CostClass}
        for k, v in dict(self.unit_costs).items():
            if k not in costs:
                raise ConfigError("unit_costs", f"unknown cost class {k!r}; expected {sorted(costs)}")
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v < 0:
                raise ConfigError("unit_costs", f"{k} must be a non-negative number")
            costs[k] = float(v)
        self.unit_costs = costs
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed", "expected a non-negative integer")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if d["partition"] is not None:
            d["partition"] = {str(k): v for k, v in d["partition"].items()}
        if d["private"] is not None:
            d["private"] = {str(k): v for k, v in d["private"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_FLOAT_FIELDS = ("synth_spread", "synth_min_separation", "r_threshold", "p_join", "lr", "share_ratio")


def _int_at_least(cfg, name, lo):
    v = getattr(cfg, name)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if v < lo:
        raise ConfigError(name, f"must be >= {lo}, got {v}")


def _positive(cfg, name, allow_zero=False):
    v = getattr(cfg, name)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(name, f"must be {'non-negative' if allow_zero else 'positive'}, got {v}")


def _unit_interval(cfg, name):
    v = getattr(cfg, name)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if not 0.0 <= v <= 1.0:
        raise ConfigError(name, f"must lie in [0, 1], got {v}")


FIELD_NAMES = frozenset(f.name for f in fields(ExperimentConfig))


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Load a JSON, YAML or ``key = value`` file into a plain dict."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return {}
    if path.suffix == ".json":
        data = json.loads(text)
    elif path.suffix in (".yaml", ".yml"):
        data = yaml.safe_load(text)
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            data[key] = yaml.safe_load(value) if value else None
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def parse_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the file, then non-None ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - FIELD_NAMES)
    if unknown:
        raise ConfigError(unknown[0], f"unknown configuration key(s) {unknown}")
    return ExperimentConfig(**values)
