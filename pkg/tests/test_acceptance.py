"""Exit criteria, each run at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line and then asserts the criterion.
Run alone with ``pytest -m acceptance -s``.
"""

import csv
import itertools
import math
import time

import numpy as np
import pytest

from bandit_cpe import (
    ConfidenceParams,
    DesignState,
    InstanceSpec,
    SuperArm,
    TopK,
    build_reduction_graph,
    candidate_support,
    complexity_report,
    ellipsoid_norm,
    g_allocation,
    generate_synthetic,
    quadratic_maximize,
    round_allocation,
    run_algorithm,
    uniform_allocation,
)
from bandit_cpe.allocation import Allocation, companion_circulant_formula
from bandit_cpe.harness import TIMING_COLUMNS, ExperimentConfig, bench_runtime, run_experiment
from bandit_cpe.identification import icb_p1, safoa_gamma

pytestmark = pytest.mark.acceptance

ALGOS = ("saqm", "safoa", "icb", "exhaustive")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


def top_k_value(theta, k):
    return float(np.sort(theta)[::-1][:k].sum())


def setup(n, k, delta_min, seed):
    """Instance, G-allocation and noise stream for one seed; independent of the harness."""
    dc = TopK(n, k)
    p = g_allocation(dc, candidate_support(dc, np.random.default_rng([seed, 1])))
    env = generate_synthetic(InstanceSpec(n, k, delta_min, seed), "gaussian", 1.0, [seed, 2])
    return dc, p, env


def run_seed(alg, n, k, delta_min, seed, eps, **opts):
    dc, p, env = setup(n, k, delta_min, seed)
    if alg == "saqm" and "alpha_override" not in opts:
        opts["certify"] = True
    if alg == "safoa":
        opts.setdefault("seed", seed)
    params = ConfidenceParams(1.0, k, 0.05, eps)
    res = run_algorithm(alg, env, dc, p, params, **opts)
    ok = env.theta[list(res.output.indices)].sum() >= top_k_value(env.theta, k) - eps - 1e-12
    return res, ok


# 1 ------------------------------------------------------------------------
def loop_weight(W, S):
    idx = list(S)
    B = W[np.ix_(idx, idx)]
    return (B.sum() + np.trace(B)) / 2.0


def test_criterion_1_quadratic_maximization(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    cases = subset_checks = 0
    bad = []
    for case in range(200):
        n = int(rng.integers(3, 13))
        k = int(rng.integers(2, min(6, n) + 1))
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        W = Q @ np.diag(np.exp(rng.uniform(np.log(0.1), np.log(10.0), n))) @ Q.T
        W = 0.5 * (W + W.T)
        ev = np.linalg.eigvalsh(W)
        sol = quadratic_maximize(W, k)
        opt = max(W[np.ix_(S, S)].sum() for S in map(list, itertools.combinations(range(n), k)))
        if not sol.qp_value >= sol.certificate * opt - 1e-12:
            bad.append(("certificate", case))
        G = build_reduction_graph(W)
        for _ in range(25):
            r = int(rng.integers(2, n + 1))
            S = sorted(rng.choice(n, r, replace=False).tolist())
            w, wt = loop_weight(W, S), G.subgraph_weight(S)
            subset_checks += 1
            if not w <= wt + 1e-9:
                bad.append(("lower-bound", case))
            if not wt <= (r - 1) * ev[-1] / ev[0] * w + 1e-9:
                bad.append(("upper-bound", case))
        cases += 1
    secs = time.perf_counter() - t0
    ok = not bad and secs < 120
    verdict(1, ok, f"{cases} PD matrices, {subset_checks} reduction-bound subsets, violations={bad[:5]}, {secs:.1f}s")


# 2 ------------------------------------------------------------------------
def test_criterion_2_approximation_ratio(verdict):
    t0 = time.perf_counter()
    ratios, per_run = [], []
    for delta_min in (0.1, 1.0):
        for seed in range(10):
            res, _ = run_seed("saqm", 10, 5, delta_min, seed, 0.0, alpha_override=0.9, certify=False,
                              budget=100_000, measure_ratio=True)
            r = np.array([rec.ratio for rec in res.trace])
            ratios.append(r)
            per_run.append(float(np.median(r)))
    med = float(np.median(np.concatenate(ratios)))
    secs = time.perf_counter() - t0
    ok = med >= 0.85 and secs < 1800
    verdict(2, ok, f"median ratio {med:.4f} (threshold 0.85) over {sum(map(len, ratios))} rounds; "
                   f"per-run medians {np.round(per_run, 3).tolist()}; {secs:.0f}s")


# 3 ------------------------------------------------------------------------
def test_criterion_3_pac(verdict):
    t0 = time.perf_counter()
    lines, ok = [], True
    for alg in ALGOS:
        hits = stopped = 0
        for seed in range(20):
            res, good = run_seed(alg, 8, 3, 0.5, seed, 0.1, check_every=1000, measure_ratio=False,
                                 budget=10_000_000)
            hits += good
            stopped += res.stopped
        ok &= hits / 20 >= 0.95 and stopped == 20
        lines.append(f"{alg} eps-optimal {hits}/20 stopped {stopped}/20")
    secs = time.perf_counter() - t0
    ok &= secs < 3600
    verdict(3, ok, "; ".join(lines) + f"; {secs:.0f}s")


# 4 ------------------------------------------------------------------------
SWEEP = (0.1, 0.25, 0.5, 1.0)


def test_criterion_4_monotone_samples(verdict):
    seeds = range(10)
    samples = {a: {d: [] for d in SWEEP} for a in ALGOS}
    censored = {a: 0 for a in ALGOS}
    for alg in ALGOS:
        opts = dict(alpha_override=0.9, certify=False) if alg == "saqm" else {}
        for d in SWEEP:
            for seed in seeds:
                res, _ = run_seed(alg, 10, 5, d, seed, 0.0, check_every=1000, measure_ratio=False,
                                  budget=10_000_000, **opts)
                samples[alg][d].append(res.samples)
                censored[alg] += not res.stopped
    ok, lines = True, []
    for alg in ALGOS:
        means = [np.mean(samples[alg][d]) for d in SWEEP]
        ses = [np.std(samples[alg][d], ddof=1) / math.sqrt(len(seeds)) for d in SWEEP]
        inversions = [(i, means[i + 1] - means[i], max(ses[i], ses[i + 1]))
                      for i in range(len(SWEEP) - 1) if means[i + 1] > means[i]]
        mono = not inversions or (len(inversions) == 1 and inversions[0][1] <= inversions[0][2])
        ok &= mono
        lines.append(f"{alg} means {[round(m) for m in means]} monotone={mono} censored={censored[alg]}")
    ratios = [np.mean(samples["saqm"][d]) / np.mean(samples["exhaustive"][d]) for d in SWEEP]
    comparable = all(r <= 5.0 for r in ratios)
    ok &= comparable
    lines.append(f"SAQM/Exhaustive per delta_min {np.round(ratios, 2).tolist()} (limit 5)")
    verdict(4, ok, "; ".join(lines))


# 5 ------------------------------------------------------------------------
def test_criterion_5_runtime_scaling(verdict):
    sizes = list(range(10, 25, 2))
    rows = bench_runtime(sizes, ["saqm", "safoa", "icb"], rounds=200)
    rows += bench_runtime([12, 20], ["exhaustive"], rounds=200)
    per = {(r["algorithm"], int(r["n"])): float(r["seconds_per_round"]) for r in rows}
    ok, lines = True, []
    for alg in ("saqm", "safoa", "icb"):
        ts = [per[(alg, n)] for n in sizes]
        slope = float(np.polyfit(np.log(sizes), np.log(ts), 1)[0])
        ok &= slope <= 3.5
        lines.append(f"{alg} log-log slope {slope:.2f}")
    growth = per[("exhaustive", 20)] / per[("exhaustive", 12)]
    ok &= growth >= 100
    lines.append(f"exhaustive n=20/n=12 per-round ratio {growth:.0f} (need >= 100)")
    verdict(5, ok, "; ".join(lines))


# 6 ------------------------------------------------------------------------
def test_criterion_6_numerics(verdict):
    rng = np.random.default_rng(6)
    worst_sm = 0.0
    for n in (4, 8, 12, 16, 20):
        k = max(2, n // 3)
        state = DesignState(n)
        while not state.invertible:
            state.update(SuperArm(tuple(sorted(rng.choice(n, k, replace=False).tolist())), n), float(rng.normal()))
        for _ in range(1000):
            state.update(SuperArm(tuple(sorted(rng.choice(n, k, replace=False).tolist())), n), float(rng.normal()))
            worst_sm = max(worst_sm, float(np.linalg.norm(state.A_inv - np.linalg.inv(state.A), "fro")))

    worst_theta = 0.0
    for n, k in ((5, 2), (10, 5), (16, 4)):
        theta = rng.normal(size=n)
        state = DesignState(n)
        while not state.invertible or state.t < 3 * n:
            arm = SuperArm(tuple(sorted(rng.choice(n, k, replace=False).tolist())), n)
            state.update(arm, float(theta[list(arm.indices)].sum()))
        worst_theta = max(worst_theta, float(np.max(np.abs(state.theta_hat - theta))))

    conserved = 0
    for _ in range(1000):
        s = int(rng.integers(1, 30))
        probs = rng.dirichlet(np.full(s, float(rng.uniform(0.3, 3.0))))
        p = Allocation([SuperArm((i,), s) for i in range(s)], probs)
        t = int(rng.integers(s, 10_000))
        conserved += int(round_allocation(p, t).sum()) == t

    circ_fail = []
    for n in range(3, 33):
        for k in range(2, n):
            B = np.zeros((n, n))
            for i in range(n):
                x = np.zeros(n)
                x[[(i + d) % n for d in range(k)]] = 1.0
                B += np.outer(x, x)
            err = np.max(np.abs(np.sort(companion_circulant_formula(n, k)) - np.linalg.eigvalsh(B)))
            if err > 1e-8:
                circ_fail.append((n, k))
    pairs = sum(n - 2 for n in range(3, 33))
    checks = {
        "sherman-morrison": worst_sm <= 1e-8,
        "noiseless theta": worst_theta <= 1e-9,
        "rounding": conserved == 1000,
        "circulant identity": not circ_fail,
    }
    detail = (f"SM frobenius {worst_sm:.2e}; theta error {worst_theta:.2e}; rounding {conserved}/1000; "
              f"circulant identity fails on {len(circ_fail)}/{pairs} (n,k) pairs, "
              f"k=2 failures {[c for c in circ_fail if c[1] == 2]}; "
              f"failed checks {[c for c, v in checks.items() if not v]}")
    verdict(6, all(checks.values()), detail)


# 7 ------------------------------------------------------------------------
def test_criterion_7_micro_examples(verdict):
    dc = TopK(3, 2)
    state = DesignState(3)
    for arm in ((0, 1), (1, 2), (0, 2)):
        state.update(SuperArm(arm, 3), 0.0)
    A = np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert np.array_equal(state.A, A)
    norm = ellipsoid_norm(state, [1, 1, 0])
    p = uniform_allocation(list(dc.enumerate()))
    rep = complexity_report(p, [1.0, 0.7, 0.2], dc, 0.0)
    gamma = safoa_gamma(np.linalg.inv(A), [1, 0, 1], [1, 1, 0], 4.0)
    Z, arm, _ = icb_p1([3, 2, 1], [1, 1, 1], 0.5, dc, (0, 1))
    got = {"norm": norm, "rho": rep.rho, "rho_prime": rep.rho_prime, "gamma": gamma, "Z": Z}
    want = {"norm": 1.0, "rho": 3.0, "rho_prime": 9.0, "gamma": math.sqrt(2.0), "Z": 5.0}
    ok = all(abs(got[key] - want[key]) <= 1e-10 for key in want) and arm == (0, 2)
    verdict(7, ok, ", ".join(f"{key}={got[key]:.12g}" for key in want))


# 8 ------------------------------------------------------------------------
def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in csv.DictReader(fh)]


def test_criterion_8_determinism(verdict, tmp_path, monkeypatch):
    cfg = ExperimentConfig.from_dict({
        "algorithm": list(ALGOS), "n": 6, "k": 3, "epsilon": 0.2, "delta_min": 0.5,
        "seeds": list(range(5)), "check_every": 200,
    })
    a = run_experiment(cfg, tmp_path / "a")
    monkeypatch.setenv("BANDIT_CPE_THREADS", "4")
    b = run_experiment(cfg, tmp_path / "b")
    same_rows = _rows(a) == _rows(b)
    traces = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv") if p.name != "results.csv")
    same_traces = all((tmp_path / "a" / t).read_bytes() == (tmp_path / "b" / t).read_bytes() for t in traces)
    ok = same_rows and same_traces and len(_rows(a)) == 20
    verdict(8, ok, f"{len(_rows(a))} rows identical={same_rows}; {len(traces)} trace files identical={same_traces}")
