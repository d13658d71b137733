"""Command line entry point: ``raftfed pretest | train | traffic``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .harness import DEFAULT_P_GRID, pretest_csv, run_pretest, run_training_experiment
from .simnet import expected_election_traffic, expected_global_election_traffic, expected_training_traffic, \
    probe_traffic_bounds


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raftfed", description="Serverless clustered federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("pretest", help="election rounds and success rate over joining probabilities")
    pt.add_argument("--m", type=_ints, default=[10, 100], help="comma-separated node counts")
    pt.add_argument("--p-grid", type=_floats, default=list(DEFAULT_P_GRID))
    pt.add_argument("--trials", type=int, default=500)
    pt.add_argument("--round-limit", type=int, default=1000)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", help="write pretest.csv into this directory instead of stdout")

    tr = sub.add_parser("train", help="run the full protocol and write metrics")
    tr.add_argument("--config", help="JSON, YAML or key=value file")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out")
    tr.add_argument("--dataset", choices=["synthetic", "mnist"])
    tr.add_argument("--p-join", type=float)
    tr.add_argument("--r-threshold", type=float)
    tr.add_argument("--pretrain-rounds", type=int)
    tr.add_argument("--share-ratio", type=float)
    tr.add_argument("--rounds", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--trace", action="store_true", help="write election rounds as JSON lines")

    tf = sub.add_parser("traffic", help="print closed-form communication traffic")
    tf.add_argument("--m", type=int, default=10)
    tf.add_argument("--p-join", type=float, default=0.5)
    tf.add_argument("--eps1", type=float, default=1.0)
    tf.add_argument("--eps2", type=float, default=1.0)
    tf.add_argument("--data-cost", type=float, default=1.0)
    tf.add_argument("--epochs", type=int, default=1)
    tf.add_argument("--sizes", type=_ints, default=[3, 3], help="comma-separated cluster sizes")
    tf.add_argument("--transfer-cost", type=float, default=1.0)
    return parser


def _traffic(args) -> dict:
    best, worst = probe_traffic_bounds(args.m, args.eps2)
    raftfed, conventional = expected_training_traffic(args.epochs, args.sizes, args.transfer_cost)
    return {
        "election": expected_election_traffic(args.m, args.p_join, args.eps1),
        "clustering_best": best,
        "clustering_worst": worst,
        "global_election": expected_global_election_traffic(args.m, args.p_join, args.eps1, args.data_cost),
        "training_raftfed": raftfed,
        "training_conventional": conventional,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "pretest":
        cells = run_pretest(args.m, args.p_grid, args.trials, args.seed, args.round_limit)
        text = pretest_csv(cells)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "pretest.csv").write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    if args.command == "traffic":
        try:
            print(json.dumps(_traffic(args), indent=2))
        except ValueError as exc:
            print(json.dumps({"error": "ValueError", "message": str(exc)}), file=sys.stderr)
            return 2
        return 0

    overrides = {
        "seed": args.seed, "out": args.out, "dataset": args.dataset, "p_join": args.p_join,
        "r_threshold": args.r_threshold, "pretrain_rounds": args.pretrain_rounds,
        "share_ratio": args.share_ratio, "rounds": args.rounds, "lr": args.lr,
    }
    try:
        cfg = parse_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "field": getattr(exc, "field", None),
                          "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps({"config": cfg.to_dict()}, sort_keys=True))
    status = run_training_experiment(cfg, trace=args.trace)
    if status:
        sys.stderr.write((Path(cfg.out) / "error.json").read_text())
    return status


if __name__ == "__main__":
    sys.exit(main())
