"""Batch experiments: seeded runs, runtime benchmarks and result aggregation."""

from __future__ import annotations

import csv
import glob as globmod
import json
import math
import os
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .allocation import Allocation, candidate_support, cyclic_design, g_allocation, uniform_allocation
from .core import TopK
from .environments import InstanceSpec, generate_synthetic, ingest_crowd
from .identification import ALGORITHMS, ConfidenceParams, is_eps_optimal, run_algorithm

STRATEGIES = ("g", "uniform", "cyclic")
RESULT_COLUMNS = [
    "seed", "algorithm", "n", "k", "delta_min", "samples", "stopped", "correct",
    "wall_clock_total", "wall_clock_per_round_mean", "ratio_trace",
]
TIMING_COLUMNS = ("wall_clock_total", "wall_clock_per_round_mean")
TRACE_COLUMNS = ["round", "margin", "alpha", "ratio", "additive_error", "certificate"]
BENCH_COLUMNS = ["algorithm", "n", "k", "rounds", "seconds_per_round"]


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


@dataclass
class ExperimentConfig:
    algorithm: str | list = "saqm"
    environment: str = "synthetic"
    labels: str | None = None
    truth: str | None = None
    n: int | None = 8
    k: int = 3
    delta: float = 0.05
    epsilon: float = 0.0
    delta_min: float = 0.5
    allocation: str = "g"
    seeds: list = field(default_factory=lambda: [0])
    budget: int = 10_000_000
    alpha_override: float | None = 0.9
    ell: int = 1
    check_every: int = 1
    trace_every: int = 1
    noise: str = "gaussian"
    noise_scale: float = 1.0

    @property
    def algorithms(self) -> list[str]:
        return [self.algorithm] if isinstance(self.algorithm, str) else list(self.algorithm)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        if base_dir is not None:
            for key in ("labels", "truth"):
                val = getattr(cfg, key)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, key, str(base_dir / val))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data, base_dir=path.parent)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for a in self.algorithms:
            need(a in ALGORITHMS, f"algorithm must be one of {sorted(ALGORITHMS)}, got {a!r}")
        need(self.environment in ("synthetic", "crowd"), "environment must be 'synthetic' or 'crowd'")
        if self.environment == "crowd":
            need(self.labels and self.truth, "crowd environment needs 'labels' and 'truth' files")
        else:
            need(isinstance(self.n, int) and isinstance(self.k, int), "n and k must be integers")
            need(2 <= self.k and self.k + 1 <= self.n, f"need 2 <= k and k + 1 <= n, got n={self.n}, k={self.k}")
            need(0.0 <= self.delta_min <= 1.0, "delta_min must lie in [0, 1]")
        need(0.0 < self.delta < 1.0, "delta must lie in (0, 1)")
        need(self.epsilon >= 0.0, "epsilon must be nonnegative")
        need(self.allocation in STRATEGIES, f"allocation must be one of {STRATEGIES}")
        need(isinstance(self.seeds, list) and all(isinstance(s, int) and s >= 0 for s in self.seeds),
             "seeds must be a list of nonnegative integers")
        need(len(set(self.seeds)) == len(self.seeds), "seeds must be distinct")
        need(isinstance(self.budget, int) and self.budget > 0, "budget must be a positive integer")
        need(self.alpha_override is None or 0.0 < self.alpha_override <= 1.0, "alpha_override must lie in (0, 1]")
        need(isinstance(self.ell, int) and self.ell >= 1, "ell must be >= 1")
        need(isinstance(self.check_every, int) and self.check_every >= 1, "check_every must be >= 1")
        need(isinstance(self.trace_every, int) and self.trace_every >= 1, "trace_every must be >= 1")
        need(self.noise in ("gaussian", "uniform", "none"), "noise must be gaussian, uniform or none")
        need(self.noise_scale > 0, "noise_scale must be positive")


def build_allocation(dc, strategy: str, rng: np.random.Generator) -> Allocation:
    if strategy == "cyclic":
        if not isinstance(dc, TopK):
            raise ConfigError("cyclic allocation needs a top-k decision class")
        return uniform_allocation(cyclic_design(dc.n, dc.k).arms)
    support = candidate_support(dc, rng)
    if strategy == "uniform":
        return uniform_allocation(support)
    return g_allocation(dc, support)


def _make_env(cfg: ExperimentConfig, seed: int, noise_seed):
    if cfg.environment == "crowd":
        env = ingest_crowd(cfg.labels, cfg.truth, seed=noise_seed)
        if not 2 <= cfg.k < env.n:
            raise ConfigError(f"k={cfg.k} must lie in [2, {env.n - 1}] for {env.n} workers")
        return env, 1.0
    env = generate_synthetic(InstanceSpec(cfg.n, cfg.k, cfg.delta_min, seed), cfg.noise, cfg.noise_scale, noise_seed)
    # Gaussian noise is unbounded; its sigma stands in for R.  Noiseless runs still need R > 0.
    R = cfg.noise_scale if cfg.noise != "none" else 1e-6
    return env, R


def _seed_streams(seed: int):
    noise_ss, alloc_ss, algo_ss = np.random.SeedSequence(seed).spawn(3)
    return (int(noise_ss.generate_state(1)[0]), np.random.default_rng(alloc_ss),
            int(algo_ss.generate_state(1)[0]))


def run_one(cfg: ExperimentConfig, algorithm: str, seed: int):
    """One seeded run; returns the result row and its trace records."""
    noise_seed, alloc_rng, algo_seed = _seed_streams(seed)
    env, R = _make_env(cfg, seed, noise_seed)
    dc = TopK(env.n, cfg.k)
    p = build_allocation(dc, cfg.allocation, alloc_rng)
    params = ConfidenceParams(R, cfg.k, cfg.delta, cfg.epsilon)
    opts = dict(budget=cfg.budget, check_every=cfg.check_every, trace_every=cfg.trace_every)
    if algorithm == "saqm":
        opts["alpha_override"] = cfg.alpha_override
    elif algorithm == "safoa":
        opts.update(ell=cfg.ell, seed=algo_seed)
    res = run_algorithm(algorithm, env, dc, p, params, **opts)
    correct = is_eps_optimal(res.output, env.theta, dc, cfg.epsilon, tol=1e-12)
    row = {
        "seed": seed, "algorithm": algorithm, "n": env.n, "k": cfg.k,
        "delta_min": cfg.delta_min if cfg.environment == "synthetic" else "",
        "samples": res.samples, "stopped": int(res.stopped), "correct": int(correct),
        "wall_clock_total": f"{res.seconds_total:.6g}",
        "wall_clock_per_round_mean": f"{res.seconds_per_round:.6g}",
        "ratio_trace": f"traces/{algorithm}_seed{seed}.csv",
    }
    return row, res.trace


def _pool_size() -> int:
    cap = os.environ.get("BANDIT_CPE_THREADS")
    size = os.cpu_count() or 1
    if cap:
        try:
            size = min(size, max(int(cap), 1))
        except ValueError:
            raise ConfigError(f"BANDIT_CPE_THREADS must be an integer, got {cap!r}") from None
    return size


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_trace(path: Path, trace) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            w.writerow([rec.t, _fmt(rec.margin), _fmt(rec.alpha), _fmt(rec.ratio),
                        _fmt(rec.additive_error), _fmt(rec.certificate)])


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Run every (algorithm, seed) pair and write ``results.csv`` plus traces."""
    cfg.validate()
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    jobs = [(a, s) for a in cfg.algorithms for s in cfg.seeds]
    workers = min(_pool_size(), max(len(jobs), 1))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outputs = list(pool.map(lambda j: run_one(cfg, *j), jobs))
    else:
        outputs = [run_one(cfg, *j) for j in jobs]
    rows = []
    for row, trace in outputs:
        write_trace(out / row["ratio_trace"], trace)
        rows.append(row)
    path = out / "results.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with (out / "config.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def bench_runtime(n_list, algorithms, rounds: int = 100, seed: int = 0, out=None,
                  enumeration_budget: int = 1_000_000, log=None) -> list[dict]:
    """Per-round wall-clock (excluding sampling) over ``rounds`` rounds, k = n/2."""
    log = sys.stderr if log is None else log
    if rounds < 100:
        raise ConfigError("bench needs at least 100 rounds per configuration")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    rows = []
    for n in n_list:
        if n < 4 or n % 2:
            raise ConfigError(f"bench sizes must be even and >= 4, got {n}")
        k = n // 2
        dc = TopK(n, k)
        noise_seed, alloc_rng, algo_seed = _seed_streams(seed)
        p = g_allocation(dc, candidate_support(dc, alloc_rng))
        env = generate_synthetic(InstanceSpec(n, k, 0.5, seed), "gaussian", 1.0, noise_seed)
        params = ConfidenceParams(1.0, k, 0.05, 0.0)
        for a in algorithms:
            if a == "exhaustive" and math.comb(n, k) > enumeration_budget:
                print(f"skipping exhaustive at n={n}: C({n},{k}) = {math.comb(n, k)} exceeds "
                      f"the enumeration budget {enumeration_budget}", file=log)
                continue
            opts = dict(budget=len(p.support) + rounds, measure_ratio=False)
            if a == "saqm":
                opts["alpha_override"] = 0.9
            elif a == "safoa":
                opts["seed"] = algo_seed
            res = run_algorithm(a, env.clone(), dc, p, params, **opts)
            post = res.samples - len(p.support)
            rows.append({"algorithm": a, "n": n, "k": k, "rounds": post,
                         "seconds_per_round": f"{res.seconds_per_round:.6g}"})
    if out is not None:
        write_rows(out, BENCH_COLUMNS, rows)
    return rows


def write_rows(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


AGG_COLUMNS = ["algorithm", "n", "k", "delta_min", "runs", "samples_mean", "samples_std",
               "seconds_mean", "seconds_std", "correct_rate", "stopped_rate"]


def _mean_std(vals):
    a = np.asarray(vals, dtype=float)
    return float(a.mean()), float(a.std())


def report(pattern: str, out_dir) -> list[dict]:
    """Aggregate result CSVs matching ``pattern`` by (algorithm, n, k, delta_min).

    Writes ``aggregate.csv``, gnuplot data files ``samples_<alg>.dat`` (x =
    delta_min) and ``seconds_<alg>.dat`` (x = n), and ``ratio_curve.dat``
    (mean recorded ratio per round across traces).
    """
    files = sorted(globmod.glob(pattern, recursive=True))
    if not files:
        raise FileNotFoundError(f"no result files match {pattern!r}")
    groups = defaultdict(list)
    ratio_sum, ratio_cnt = defaultdict(float), defaultdict(int)
    for f in files:
        with open(f, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"algorithm", "n", "k", "delta_min", "samples"} - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"{f}: not a results file (missing {', '.join(sorted(missing))})")
            for row in reader:
                key = (row["algorithm"], int(row["n"]), int(row["k"]), row["delta_min"])
                groups[key].append(row)
                ref = row.get("ratio_trace")
                if ref:
                    tp = Path(f).parent / ref
                    if tp.exists():
                        with tp.open(newline="", encoding="utf-8") as th:
                            for tr in csv.DictReader(th):
                                if tr.get("ratio"):
                                    ratio_sum[int(tr["round"])] += float(tr["ratio"])
                                    ratio_cnt[int(tr["round"])] += 1
    agg = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], float(k[3]) if k[3] else -1.0)):
        rows = groups[key]
        sm, ss = _mean_std([r["samples"] for r in rows])
        tm, ts = _mean_std([r.get("wall_clock_total") or 0.0 for r in rows])
        agg.append({
            "algorithm": key[0], "n": key[1], "k": key[2], "delta_min": key[3], "runs": len(rows),
            "samples_mean": repr(sm), "samples_std": repr(ss), "seconds_mean": repr(tm), "seconds_std": repr(ts),
            "correct_rate": repr(_mean_std([r.get("correct") or 0 for r in rows])[0]),
            "stopped_rate": repr(_mean_std([r.get("stopped") or 0 for r in rows])[0]),
        })
    out = Path(out_dir)
    write_rows(out / "aggregate.csv", AGG_COLUMNS, agg)
    by_alg = defaultdict(list)
    for r in agg:
        by_alg[r["algorithm"]].append(r)
    for alg, rs in by_alg.items():
        with (out / f"samples_{alg}.dat").open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("# n k delta_min samples_mean samples_std\n")
            for r in rs:
                if r["delta_min"] != "":
                    fh.write(f"{r['n']} {r['k']} {r['delta_min']} {r['samples_mean']} {r['samples_std']}\n")
        with (out / f"seconds_{alg}.dat").open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("# n k seconds_mean seconds_std\n")
            for r in sorted(rs, key=lambda r: r["n"]):
                fh.write(f"{r['n']} {r['k']} {r['seconds_mean']} {r['seconds_std']}\n")
    with (out / "ratio_curve.dat").open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("# round mean_ratio count\n")
        for t in sorted(ratio_sum):
            fh.write(f"{t} {ratio_sum[t] / ratio_cnt[t]!r} {ratio_cnt[t]}\n")
    return agg
