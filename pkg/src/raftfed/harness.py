"""Reproduction drivers: the joining-probability pretest and full training runs."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .clustering import clusters_to_json
from .config import ExperimentConfig
from .data import partitions_to_json
from .election import DEFAULT_ROUND_LIMIT, ElectionFailure, run_leader_election
from .model import save_params
from .orchestrator import METRIC_COLUMNS, ExperimentState, run_raftfed
from .simnet import substream

log = logging.getLogger(__name__)

PRETEST_COLUMNS = ["m", "p", "mean_rounds", "success_rate"]
DEFAULT_P_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass
class PretestCell:
    m: int
    p: float
    mean_rounds: float  # over successful elections; nan if none succeeded
    success_rate: float
    trials: int

    def row(self) -> list:
        mr = "" if math.isnan(self.mean_rounds) else f"{self.mean_rounds:.6f}"
        return [self.m, f"{self.p:g}", mr, f"{self.success_rate:.6f}"]


def pretest_cell(m: int, p: float, trials: int, seed: int, round_limit: int = DEFAULT_ROUND_LIMIT) -> PretestCell:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = substream(seed, f"pretest/{m}/{p:g}")
    nodes = list(range(m))
    rounds = []
    for _ in range(trials):
        try:
            out = run_leader_election(nodes, p, rng, round_limit=round_limit, keep_trace=False)
        except ElectionFailure:
            continue
        rounds.append(out.rounds)
    mean = sum(rounds) / len(rounds) if rounds else float("nan")
    return PretestCell(m, p, mean, len(rounds) / trials, trials)


def run_pretest(ms: Iterable[int], ps: Iterable[float] = DEFAULT_P_GRID, trials: int = 500, seed: int = 0,
                round_limit: int = DEFAULT_ROUND_LIMIT) -> list[PretestCell]:
    """Election rounds and success rate for every (m, p) cell."""
    return [pretest_cell(m, p, trials, seed, round_limit) for m in ms for p in ps]


def pretest_csv(cells: Sequence[PretestCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRETEST_COLUMNS)
    for c in cells:
        w.writerow(c.row())
    return buf.getvalue()


def metrics_csv(state: ExperimentState) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in state.round_metrics:
        w.writerow(m.row())
    return buf.getvalue()


def _metric_dict(m) -> dict:
    return {"round": m.round, "accuracy": m.accuracy, "loss": m.loss,
            "ledger": {k.value: v for k, v in m.ledger.items()}, "total_cost": m.total_cost}


def summary(state: ExperimentState, cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "leader": state.leader,
        "global_node": state.global_node,
        "clusters": [c.to_dict() for c in state.clusters],
        "shared_pool_size": len(state.shared_pool),
        "election_rounds": {k: v.rounds for k, v in state.elections.items()},
        "pretrained": _metric_dict(state.initial_metrics),
        "final": _metric_dict(state.round_metrics[-1]) if state.round_metrics else None,
        "ledger": state.ledger.to_dict(),
    }


def trace_lines(state: ExperimentState) -> str:
    lines = []
    for name, outcome in state.elections.items():
        for rec in outcome.trace:
            d = json.loads(rec.to_json())
            lines.append(json.dumps({"election": name, **d}))
    return "\n".join(lines) + "\n"


def run_training_experiment(cfg: ExperimentConfig, trace: bool = False, datasets=None) -> int:
    """Run RaftFed and write the run directory; returns a process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    try:
        state = run_raftfed(cfg, datasets, callback=lambda m: log.info(
            "round %d acc %.4f loss %.4f", m.round, m.accuracy, m.loss))
    except Exception as exc:  # surfaced as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc),
               "round": getattr(exc, "round", None), "rounds_attempted": getattr(exc, "rounds", None),
               "traceback": traceback.format_exc()}
        (out / "error.json").write_text(json.dumps(err, indent=2) + "\n")
        log.error("run failed: %s", exc)
        return 1
    (out / "metrics.csv").write_text(metrics_csv(state))
    (out / "ledger.json").write_text(state.ledger.to_json(indent=2) + "\n")
    (out / "clusters.json").write_text(clusters_to_json(state.clusters, indent=2) + "\n")
    (out / "partitions.json").write_text(partitions_to_json({i: n.data for i, n in state.nodes.items()}) + "\n")
    (out / "summary.json").write_text(json.dumps(summary(state, cfg), indent=2) + "\n")
    save_params(state.params, out / "model.bin", seed=cfg.seed)
    if trace:
        (out / "trace.jsonl").write_text(trace_lines(state))
    return 0
