"""Fixed-confidence identification of the best super-arm from full-bandit feedback.

Four static-allocation algorithms share one run loop and differ only in
their stopping rule:

``saqm``
    confidence ellipsoids with the ellipsoid maximum approximated through
    the densest-k-subgraph reduction;
``safoa``
    a first-order surrogate of the gap confidence bound, maximized over
    ``ell * n`` randomized quadratic problems;
``icb``
    independent (diagonal) confidence bounds, solvable by linear maximization;
``exhaustive``
    the exact ellipsoid bound over every super-arm (exponential time).

Pulls follow the tracking rule of the allocation, so for a given allocation
all four algorithms pull the same sequence of super-arms.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import Allocation, Tracker, indicator_matrix
from .core import DecisionClass, SuperArm, TopK
from .dks import BudgetExceededError, GreedyPeeling, build_reduction_graph, ratio_certificate
from .linalg import ConvergenceError, DesignState, extreme_eigenvalues

C_PRIME = 6.0 / math.pi**2
DEFAULT_BUDGET = 10_000_000
ENUMERATION_BUDGET = 1_000_000
RATIO_MAX_N = 12


@dataclass(frozen=True)
class ConfidenceParams:
    """Confidence-bound constants for per-arm noise bounded by ``R``.

    A super-arm sums ``k`` noisy arms, so the noise bound of one observation
    is sigma = k R.
    """

    R: float
    k: int
    delta: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.R <= 0 or self.k < 1:
            raise ValueError("need R > 0 and k >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @property
    def sigma(self) -> float:
        return self.k * self.R

    @property
    def c(self) -> float:
        return 2.0 * math.sqrt(2.0) * self.sigma

    @property
    def c_prime(self) -> float:
        return C_PRIME


def _log_term(params: ConfidenceParams, t: int, log_count: float) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    arg = math.log(C_PRIME) + 2.0 * math.log(t) + log_count - math.log(params.delta)
    if arg < 0:
        raise ValueError(f"confidence radius undefined: log argument {arg:.3g} < 0")
    return arg


def conf_radius_ellipsoid(params: ConfidenceParams, t: int, logK: float) -> float:
    """C_t = 2 sqrt(2) k R sqrt(log(c' t^2 K / delta)), with K passed as log K."""
    return params.c * math.sqrt(_log_term(params, t, logK))


def conf_radius_independent(params: ConfidenceParams, t: int, n: int) -> float:
    """C_t = k R sqrt(2 log(c' t^2 n / delta)) for the diagonal bound."""
    return params.sigma * math.sqrt(2.0 * _log_term(params, t, math.log(n)))


@dataclass(slots=True)
class TraceRecord:
    t: int
    best_value: float
    margin: float
    alpha: float
    seconds_per_round: float
    ratio: float = math.nan
    additive_error: float = math.nan
    certificate: float = math.nan
    event: bool | None = None


@dataclass
class StoppingDiagnostics:
    empirical_best: SuperArm
    challenger: SuperArm | None
    empirical_gap: float
    radius: float
    terms: dict = field(default_factory=dict)


@dataclass
class RunResult:
    output: SuperArm
    samples: int
    stopped: bool
    trace: list[TraceRecord]
    seconds_total: float
    seconds_per_round: float
    diagnostics: StoppingDiagnostics | None = None
    state: DesignState | None = None
    pulls: np.ndarray | None = None
    event_at_stop: bool | None = None


@dataclass
class _Check:
    stop: bool
    margin: float
    alpha: float = math.nan
    ratio: float = math.nan
    additive_error: float = math.nan
    certificate: float = math.nan
    diagnostics: StoppingDiagnostics | None = None


def _set_value(theta_hat: np.ndarray, idx) -> float:
    return float(theta_hat[list(idx)].sum())


def _quad(Ainv: np.ndarray, idx) -> float:
    idx = list(idx)
    return float(Ainv[np.ix_(idx, idx)].sum())


def _all_rows(dc: DecisionClass, budget: int) -> np.ndarray:
    if dc.log_size > math.log(budget) + 1e-9:
        raise BudgetExceededError(f"decision class has about {dc.size:.3g} super-arms; budget is {budget}")
    if isinstance(dc, TopK):
        combos = np.array(list(itertools.combinations(range(dc.n), dc.k)), dtype=np.intp)
        X = np.zeros((len(combos), dc.n))
        np.put_along_axis(X, combos, 1.0, axis=1)
        return X
    return indicator_matrix(list(dc.enumerate()))


def _row_quadratic(X: np.ndarray, M: np.ndarray, chunk: int = 65_536) -> np.ndarray:
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        blk = X[s:s + chunk]
        out[s:s + chunk] = np.einsum("ij,ij->i", blk @ M, blk)
    return np.maximum(out, 0.0)


class _Algorithm:
    """Run loop shared by all algorithms; subclasses implement ``check``."""

    name = "base"

    def __init__(self, env, dc: DecisionClass, p: Allocation, params: ConfidenceParams, *,
                 budget: int = DEFAULT_BUDGET, check_every: int = 1, trace_every: int = 1,
                 record_pulls: bool = False, measure_ratio: bool | None = None,
                 true_theta=None):
        if p.n != dc.n:
            raise ValueError("allocation and decision class disagree on n")
        if any(not dc.contains(a) for a in p.support):
            raise ValueError("allocation support contains infeasible super-arms")
        if not p.identifiable:
            raise ValueError("allocation support does not span R^n")
        if dc.log_size < math.log(2) - 1e-12:
            raise ValueError("decision class needs at least two super-arms")
        if check_every < 1 or trace_every < 1:
            raise ValueError("check_every and trace_every must be >= 1")
        self.env, self.dc, self.p, self.params = env, dc, p, params
        self.n = dc.n
        self.k = len(p.support[0])
        self.budget = budget
        self.check_every = check_every
        self.trace_every = trace_every
        self.record_pulls = record_pulls
        self.X_supp = indicator_matrix(p.support)
        sizes = {len(a) for a in p.support}
        self._supp_idx = np.array([a.indices for a in p.support], dtype=np.intp) if len(sizes) == 1 else None
        if measure_ratio is None:
            measure_ratio = self.n <= RATIO_MAX_N
        self.measure_ratio = measure_ratio and self.n <= RATIO_MAX_N and dc.log_size <= math.log(ENUMERATION_BUDGET)
        self.true_theta = None if true_theta is None else np.asarray(true_theta, dtype=float)
        self._X_all = None
        if self.measure_ratio or self.true_theta is not None:
            self._X_all = _all_rows(dc, ENUMERATION_BUDGET)

    # subclasses ---------------------------------------------------------
    def check(self, state: DesignState) -> _Check:
        raise NotImplementedError

    def event_radius(self, t: int) -> float:
        return conf_radius_ellipsoid(self.params, t, self.dc.log_size)

    def event_holds(self, state: DesignState) -> bool:
        """|theta(M) - theta_hat(M)| <= C_t ||chi_M||_{A^{-1}} for every M."""
        X = self._X_all
        C = self.event_radius(state.t)
        err = np.abs(X @ (self.true_theta - state.theta_hat))
        return bool(np.all(err <= C * np.sqrt(_row_quadratic(X, state.A_inv)) + 1e-12))

    # loop ---------------------------------------------------------------
    def run(self) -> RunResult:
        env, p, state = self.env, self.p, DesignState(self.n)
        support = p.support
        s = len(support)
        pulls = [] if self.record_pulls else None
        algo_time = 0.0
        rounds = 0

        rewards = env.pull_many(list(support))
        t0 = time.perf_counter()
        for arm, r in zip(support, rewards):
            state.update(arm, float(r))
        algo_time += time.perf_counter() - t0
        if pulls is not None:
            pulls.extend(range(s))
        tracker = Tracker(p.probs, counts=np.ones(s, dtype=np.int64))

        trace: list[TraceRecord] = []
        n_checks = 0
        window_time, window_rounds = 0.0, 0
        last: _Check | None = None
        stopped = False
        while True:
            if state.invertible:
                t0 = time.perf_counter()
                chk = self.check(state)
                dt = time.perf_counter() - t0
                algo_time += dt
                window_time += dt
                last = chk
                event = self.event_holds(state) if self.true_theta is not None else None
                if n_checks % self.trace_every == 0 or chk.stop:
                    best = chk.diagnostics.empirical_best if chk.diagnostics else None
                    trace.append(TraceRecord(
                        state.t,
                        _set_value(state.theta_hat, best.indices) if best else math.nan,
                        chk.margin, chk.alpha,
                        window_time / max(window_rounds, 1),
                        chk.ratio, chk.additive_error, chk.certificate, event,
                    ))
                window_time, window_rounds = 0.0, 0
                n_checks += 1
                if chk.stop:
                    stopped = True
                    break
            if state.t >= self.budget:
                break
            m = 1 if self.check_every == 1 else min(self.check_every, self.budget - state.t)
            if m == 1:
                i = tracker.next()
                r = env.pull(support[i])
                t0 = time.perf_counter()
                state.update(support[i], r)
                dt = time.perf_counter() - t0
                if pulls is not None:
                    pulls.append(i)
            else:
                pos = tracker.take(m)
                batch = [support[i] for i in pos] if self._supp_idx is None else self._supp_idx[pos]
                r = env.pull_many(batch)
                t0 = time.perf_counter()
                counts = np.bincount(pos, minlength=s)
                sums = np.bincount(pos, weights=r, minlength=s)
                state.update_batch(support, counts, sums, X=self.X_supp)
                dt = time.perf_counter() - t0
                if pulls is not None:
                    pulls.extend(pos.tolist())
            algo_time += dt
            window_time += dt
            window_rounds += m
            rounds += m

        if last is not None and last.diagnostics is not None:
            output = last.diagnostics.empirical_best
        elif state.invertible:
            output = self.dc.best(state.theta_hat)
        else:
            output = self.dc.best(np.zeros(self.n))
        event_at_stop = self.event_holds(state) if (self.true_theta is not None and state.invertible) else None
        return RunResult(
            output=output,
            samples=state.t,
            stopped=stopped,
            trace=trace,
            seconds_total=algo_time,
            seconds_per_round=algo_time / max(rounds, 1),
            diagnostics=last.diagnostics if last else None,
            state=state,
            pulls=None if pulls is None else np.asarray(pulls, dtype=np.int64),
            event_at_stop=event_at_stop,
        )


class SAQM(_Algorithm):
    """Confidence-ellipsoid stopping with approximate ellipsoid maximization.

    Stops when
        theta_hat(M_hat) - C_t ||chi_M_hat|| >= max_{M != M_hat} theta_hat(M) + Z_t / alpha_t - eps
    where Z_t = C_t ||chi_M'|| for the quadratic-maximization solution M' on
    A^{-1}, and alpha_t is the square root of the QP ratio certificate (or of
    ``alpha_override``).  The certificate needs both extreme eigenvalues of
    A^{-1} every round; ``certify=False`` skips it when an override is set.
    """

    name = "saqm"

    def __init__(self, *args, oracle=None, alpha_override: float | None = None, certify: bool = True, **kw):
        super().__init__(*args, **kw)
        if self.k < 2:
            raise ValueError("SAQM needs super-arms of size k >= 2")
        if alpha_override is not None and not 0 < alpha_override <= 1:
            raise ValueError("alpha_override must lie in (0, 1]")
        if not certify and alpha_override is None:
            raise ValueError("certify=False needs alpha_override")
        self.oracle = oracle or GreedyPeeling()
        self.alpha_override = alpha_override
        self.certify = certify
        self._vmax = None
        self._vmin = None

    def spectrum(self, Ainv, A=None):
        try:
            spec = extreme_eigenvalues(Ainv, x0_max=self._vmax, x0_min=self._vmin, W_inv=A)
        except ConvergenceError:
            self._vmax = self._vmin = None
            return None
        self._vmax, self._vmin = spec.basis_max, spec.basis_min
        return spec

    def check(self, state):
        Ainv, th, k = state.A_inv, state.theta_hat, self.k
        best = self.dc._argmax(th)
        C = conf_radius_ellipsoid(self.params, state.t, self.dc.log_size)
        # the certificate is only skipped when an override supplies alpha_t
        spec = self.spectrum(Ainv, state.A) if self.certify else None
        cert = math.nan
        if spec is not None:
            lo, hi = spec.lambda_min - spec.residual, spec.lambda_max + spec.residual
            if lo > 0:
                cert = ratio_certificate(k, lo, hi, self.oracle.guarantee)
        if self.alpha_override is not None:
            alpha = math.sqrt(self.alpha_override)
        else:
            alpha = math.sqrt(cert) if cert == cert else math.nan
        G = build_reduction_graph(Ainv)
        cand = self.oracle(G, k)
        cem = math.sqrt(max(_quad(Ainv, cand.indices), 0.0))
        Z = C * cem
        second = self.dc._argmax_excluding(th, best)
        best_val = _set_value(th, best)
        norm_best = math.sqrt(max(_quad(Ainv, best), 0.0))
        lhs = best_val - C * norm_best
        if alpha == alpha:
            rhs = _set_value(th, second) + Z / alpha - self.params.epsilon
            margin = lhs - rhs
        else:
            margin = -math.inf
        ratio = math.nan
        if self.measure_ratio:
            max_norm = math.sqrt(_row_quadratic(self._X_all, Ainv).max())
            ratio = cem / max_norm if max_norm > 0 else math.nan
        diag = StoppingDiagnostics(
            SuperArm(best, self.n), SuperArm(second, self.n), best_val - _set_value(th, second), C,
            {"Z": Z, "cem_subset": cand, "norm_best": norm_best, "lhs": lhs},
        )
        return _Check(margin >= 0, margin, alpha, ratio, math.nan, cert, diag)


def safoa_gamma(A_inv, chi_bar, chi_best, C: float) -> float:
    """gamma = C_t / (2 ||chi_bar - chi_best||_{A^{-1}})."""
    diff = np.asarray(chi_bar, dtype=float) - np.asarray(chi_best, dtype=float)
    q = float(diff @ A_inv @ diff)
    if q <= 0:
        raise ValueError("reference super-arm coincides with the empirical best")
    return C / (2.0 * math.sqrt(q))


class SAFOA(_Algorithm):
    """First-order surrogate of max_{M != M_hat} theta_hat(M) + C_t ||chi_M - chi_M_hat||.

    Every round draws ``ell * n`` reference super-arms M_bar from the
    support, solves the quadratic problem with matrix
        gamma A^{-1} - Diag(2 gamma A^{-1} chi_M_hat) + Diag(theta_hat),
        gamma = C_t / (2 ||chi_M_bar - chi_M_hat||),
    and keeps every candidate.  Z'_t is the exact objective maximized over
    the candidates; the run stops once eps/2 >= Z'_t - theta_hat(M_hat).
    """

    name = "safoa"

    def __init__(self, *args, ell: int = 1, oracle=None, seed: int | None = 0, **kw):
        super().__init__(*args, **kw)
        if ell < 1:
            raise ValueError("ell must be >= 1")
        self.ell = ell
        self.oracle = oracle or GreedyPeeling()
        self.rng = np.random.default_rng(seed)
        self.support_idx = [a.indices for a in self.p.support]

    def candidates(self, state, best, C):
        Ainv, th = state.A_inv, state.theta_hat
        s = len(self.support_idx)
        if all(idx == best for idx in self.support_idx):
            raise ValueError("support contains only the empirical best super-arm")
        chi_best = np.zeros(self.n)
        chi_best[list(best)] = 1.0
        Achi = Ainv @ chi_best
        draws = []
        for _ in range(self.ell * self.n):
            j = int(self.rng.integers(s))
            while self.support_idx[j] == best:
                j = int(self.rng.integers(s))
            draws.append(j)
        found: dict[int, tuple] = {}
        for j in dict.fromkeys(draws):
            gamma = safoa_gamma(Ainv, self.X_supp[j], chi_best, C)
            B = gamma * Ainv
            B[np.diag_indices(self.n)] += th - 2.0 * gamma * Achi
            found[j] = self.oracle(build_reduction_graph(B), self.k).indices
        return draws, found

    def objective(self, state, best, C, idx) -> float:
        diff = np.zeros(self.n)
        diff[list(idx)] += 1.0
        diff[list(best)] -= 1.0
        return _set_value(state.theta_hat, idx) + C * math.sqrt(max(diff @ state.A_inv @ diff, 0.0))

    def check(self, state):
        th = state.theta_hat
        best = self.dc._argmax(th)
        C = conf_radius_ellipsoid(self.params, state.t, self.dc.log_size)
        draws, found = self.candidates(state, best, C)
        F = [idx for idx in dict.fromkeys(found.values()) if idx != best]
        fallback = not F
        if fallback:
            F = [self.dc._argmax_excluding(th, best)]
        vals = [self.objective(state, best, C, idx) for idx in F]
        i = int(np.argmax(vals))
        Zp = vals[i]
        best_val = _set_value(th, best)
        margin = self.params.epsilon / 2.0 - (Zp - best_val)
        ratio = add_err = math.nan
        if self.measure_ratio:
            exact = self._exact_max(state, best, C)
            ratio = Zp / exact if exact > 0 else math.nan
            add_err = exact - Zp
        diag = StoppingDiagnostics(
            SuperArm(best, self.n), SuperArm(F[i], self.n), best_val - _set_value(th, F[i]), C,
            {"Z_prime": Zp, "F": [SuperArm(f, self.n) for f in F], "draws": draws, "fallback": fallback},
        )
        return _Check(margin >= 0, margin, math.nan, ratio, add_err, math.nan, diag)

    def _exact_max(self, state, best, C) -> float:
        chi = np.zeros(self.n)
        chi[list(best)] = 1.0
        D = self._X_all - chi
        vals = self._X_all @ state.theta_hat + C * np.sqrt(_row_quadratic(D, state.A_inv))
        vals[~np.any(D, axis=1)] = -np.inf
        return float(vals.max())


class ICB(_Algorithm):
    """Independent confidence bounds d_i = sqrt(A^{-1}(i, i)).

    Z*_t = max_{M != M_hat} theta_hat(M) + C_t sum_i |chi_M(i) - chi_M_hat(i)| d_i
    is a linear maximization with weights theta_hat_i + C_t d_i outside
    M_hat and theta_hat_i - C_t d_i inside, plus C_t sum_{i in M_hat} d_i.
    Stops once Z*_t - theta_hat(M_hat) < eps.
    """

    name = "icb"

    def event_radius(self, t):
        return conf_radius_independent(self.params, t, self.n)

    def event_holds(self, state):
        X = self._X_all
        C = self.event_radius(state.t)
        d = np.sqrt(np.clip(np.diag(state.A_inv), 0.0, None))
        err = np.abs(X @ (self.true_theta - state.theta_hat))
        return bool(np.all(err <= C * (X @ d) + 1e-12))

    def check(self, state):
        th = state.theta_hat
        best = self.dc._argmax(th)
        C = conf_radius_independent(self.params, state.t, self.n)
        d = np.sqrt(np.clip(np.diag(state.A_inv), 0.0, None))
        Z, challenger, const = icb_p1(th, d, C, self.dc, best)
        best_val = _set_value(th, best)
        margin = self.params.epsilon - (Z - best_val)
        diag = StoppingDiagnostics(
            SuperArm(best, self.n), SuperArm(challenger, self.n), best_val - _set_value(th, challenger), C,
            {"Z_star": Z, "d": d, "constant": const},
        )
        return _Check(margin > 0, margin, diagnostics=diag)


def icb_p1(theta_hat, d, C: float, dc: DecisionClass, best) -> tuple[float, tuple, float]:
    """Optimal value, maximizer and constant term of the ICB subproblem."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    d = np.asarray(d, dtype=float)
    best = tuple(best)
    inside = np.zeros(theta_hat.size, dtype=bool)
    inside[list(best)] = True
    u = np.where(inside, theta_hat - C * d, theta_hat + C * d)
    const = float(C * d[inside].sum())
    idx = dc._argmax_excluding(u, best)
    return float(u[list(idx)].sum()) + const, idx, const


class Exhaustive(_Algorithm):
    """Exact ellipsoid stopping rule by enumerating every super-arm.

    Z*_t = max_{M != M_hat} theta_hat(M) + C_t ||chi_M - chi_M_hat|| - theta_hat(M_hat);
    stops once Z*_t < eps.
    """

    name = "exhaustive"

    def __init__(self, *args, enumeration_budget: int = ENUMERATION_BUDGET, **kw):
        super().__init__(*args, **kw)
        self.X = self._X_all if self._X_all is not None else _all_rows(self.dc, enumeration_budget)

    def check(self, state):
        th = state.theta_hat
        best = self.dc._argmax(th)
        C = conf_radius_ellipsoid(self.params, state.t, self.dc.log_size)
        chi = np.zeros(self.n)
        chi[list(best)] = 1.0
        D = self.X - chi
        vals = self.X @ th + C * np.sqrt(_row_quadratic(D, state.A_inv))
        vals[~np.any(D, axis=1)] = -np.inf
        j = int(np.argmax(vals))
        best_val = _set_value(th, best)
        Z = float(vals[j]) - best_val
        challenger = tuple(int(i) for i in np.flatnonzero(self.X[j]))
        diag = StoppingDiagnostics(
            SuperArm(best, self.n), SuperArm(challenger, self.n), best_val - _set_value(th, challenger), C,
            {"Z_star": Z},
        )
        return _Check(Z < self.params.epsilon, self.params.epsilon - Z, diagnostics=diag)


ALGORITHMS: dict[str, type[_Algorithm]] = {
    "saqm": SAQM,
    "safoa": SAFOA,
    "icb": ICB,
    "exhaustive": Exhaustive,
}


def run_saqm(env, dc, p, params, dks_oracle=None, alpha_override=None, **opts) -> RunResult:
    return SAQM(env, dc, p, params, oracle=dks_oracle, alpha_override=alpha_override, **opts).run()


def run_safoa(env, dc, p, params, ell: int = 1, dks_oracle=None, seed: int | None = 0, **opts) -> RunResult:
    return SAFOA(env, dc, p, params, ell=ell, oracle=dks_oracle, seed=seed, **opts).run()


def run_icb(env, dc, p, params, **opts) -> RunResult:
    return ICB(env, dc, p, params, **opts).run()


def run_exhaustive(env, dc, p, params, **opts) -> RunResult:
    return Exhaustive(env, dc, p, params, **opts).run()


def run_algorithm(name: str, env, dc, p, params, **opts) -> RunResult:
    try:
        cls = ALGORITHMS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None
    return cls(env, dc, p, params, **opts).run()


def is_eps_optimal(output: SuperArm, theta, dc: DecisionClass, eps: float, tol: float = 1e-12) -> bool:
    theta = np.asarray(theta, dtype=float)
    best = dc.best(theta)
    return _set_value(theta, best.indices) - _set_value(theta, output.indices) <= eps + tol

