"""Command-line entry point: ``bandit-cpe {run,bench,report,dks,galloc}``.

Exit codes: 0 success, 1 runtime or data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .allocation import NonIdentifiableError, round_allocation
from .core import TopK
from .dks import BudgetExceededError, build_reduction_graph, greedy_peeling
from .environments import DataFormatError
from .harness import STRATEGIES, ConfigError, ExperimentConfig, bench_runtime, build_allocation, report, run_experiment
from .identification import ALGORITHMS


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bandit-cpe", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seeded experiment and write result CSVs")
    r.add_argument("--config", help="JSON experiment config")
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--algorithm", type=_str_list)
    r.add_argument("--seeds", type=_int_list)
    r.add_argument("--n", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--delta", type=float)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--delta-min", type=float, dest="delta_min")
    r.add_argument("--allocation", choices=STRATEGIES)
    r.add_argument("--budget", type=int)
    r.add_argument("--alpha-override", type=float, dest="alpha_override")
    r.add_argument("--ell", type=int)
    r.add_argument("--check-every", type=int, dest="check_every")
    r.add_argument("--trace-every", type=int, dest="trace_every")

    b = sub.add_parser("bench", help="per-round runtime at k = n/2")
    b.add_argument("--n", type=_int_list, required=True, help="e.g. 10,12,14")
    b.add_argument("--algos", type=_str_list, default=sorted(ALGORITHMS))
    b.add_argument("--rounds", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="CSV path (default stdout)")

    rep = sub.add_parser("report", help="aggregate result CSVs")
    rep.add_argument("pattern", help="glob of results.csv files")
    rep.add_argument("--out", default="report")

    d = sub.add_parser("dks", help="greedy peeling on a CSV edge list i,j,weight")
    d.add_argument("graph")
    d.add_argument("--k", type=int, required=True)

    g = sub.add_parser("galloc", help="print an allocation and its rounded counts")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--strategy", choices=STRATEGIES, default="g")
    g.add_argument("--t", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    return ap


def _csv_out(fh):
    return csv.writer(fh, lineterminator="\n")


def read_edge_list(path) -> np.ndarray:
    """Symmetric weight matrix from ``i,j,weight`` rows; a header row is optional."""
    edges = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{line_no}: expected i,j,weight")
            try:
                i, j, w = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                if line_no == 1:
                    continue
                raise DataFormatError(f"{path}:{line_no}: malformed row {row!r}") from None
            if i < 0 or j < 0 or i == j or not np.isfinite(w):
                raise DataFormatError(f"{path}:{line_no}: invalid edge {row!r}")
            edges.append((i, j, w))
    if not edges:
        raise DataFormatError(f"{path}: no edges")
    n = 1 + max(max(i, j) for i, j, _ in edges)
    W = np.zeros((n, n))
    for i, j, w in edges:
        W[i, j] = W[j, i] = w
    return W


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in (
        "algorithm", "seeds", "n", "k", "delta", "epsilon", "delta_min", "allocation",
        "budget", "alpha_override", "ell", "check_every", "trace_every")}
    if args.config:
        cfg = ExperimentConfig.load(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    path = run_experiment(cfg, args.out)
    print(path)
    return 0


def _cmd_bench(args) -> int:
    if args.out:
        bench_runtime(args.n, args.algos, rounds=args.rounds, seed=args.seed, out=args.out)
        print(args.out)
    else:
        rows = bench_runtime(args.n, args.algos, rounds=args.rounds, seed=args.seed)
        w = csv.DictWriter(sys.stdout, ["algorithm", "n", "k", "rounds", "seconds_per_round"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 0


def _cmd_dks(args) -> int:
    W = read_edge_list(args.graph)
    if not 1 <= args.k <= W.shape[0]:
        raise ConfigError(f"--k must lie in [1, {W.shape[0]}]")
    # the edge list is already the graph; zero diagonal leaves weights unchanged
    G = build_reduction_graph(W)
    S = greedy_peeling(G, args.k)
    w = _csv_out(sys.stdout)
    w.writerow(["subset", "value"])
    w.writerow([" ".join(map(str, S.indices)), repr(G.subgraph_weight(S.indices))])
    return 0


def _cmd_galloc(args) -> int:
    if not 2 <= args.k < args.n:
        raise ConfigError("need 2 <= k < n")
    dc = TopK(args.n, args.k)
    p = build_allocation(dc, args.strategy, np.random.default_rng(args.seed))
    counts = round_allocation(p, args.t)
    w = _csv_out(sys.stdout)
    w.writerow(["super_arm", "probability", "count"])
    for arm, q, c in zip(p.support, p.probs, counts):
        w.writerow([" ".join(map(str, arm.indices)), repr(float(q)), int(c)])
    return 0


def _cmd_report(args) -> int:
    report(args.pattern, args.out)
    print(Path(args.out) / "aggregate.csv")
    return 0


COMMANDS = {"run": _cmd_run, "bench": _cmd_bench, "report": _cmd_report, "dks": _cmd_dks, "galloc": _cmd_galloc}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, FileNotFoundError, OSError, NonIdentifiableError,
            BudgetExceededError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
