"""0-1 quadratic maximization through a densest-k-subgraph reduction.

``quadratic_maximize`` builds the complete graph with edge weights
w~_ij = w_ij + w_ii + w_jj, hands it to a densest-k-subgraph oracle and
certifies the result with (1/(k-1)) * (lambda_min / lambda_max) * alpha_DkS
when W is positive definite.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import SuperArm
from .linalg import SpectralSummary, extreme_eigenvalues

DEFAULT_BUDGET = 1_000_000


class NotPositiveDefiniteError(ValueError):
    pass


class BudgetExceededError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedGraph:
    """Complete graph on ``n`` vertices; ``weights`` is symmetric with a zero diagonal."""

    n: int
    weights: np.ndarray
    clamped: int = 0

    def subgraph_weight(self, subset) -> float:
        idx = list(subset)
        return float(self.weights[np.ix_(idx, idx)].sum() / 2.0)

    def degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)


def build_reduction_graph(W) -> WeightedGraph:
    """Edge weights w~_ij = w_ij + w_ii + w_jj; negatives (non-PD input) clamped to 0."""
    W = np.asarray(W, dtype=float)
    d = np.diag(W)
    Wt = W + d[:, None] + d[None, :]
    np.fill_diagonal(Wt, 0.0)
    neg = Wt < 0
    clamped = int(np.count_nonzero(np.triu(neg, 1)))
    if clamped:
        Wt[neg] = 0.0
    return WeightedGraph(W.shape[0], Wt, clamped)


def _peel(weights: np.ndarray, k: int) -> list[int]:
    n = weights.shape[0]
    deg = weights.sum(axis=1)
    alive = np.ones(n, dtype=bool)
    for _ in range(n - k):
        masked = np.where(alive, deg, np.inf)
        # among tied minima peel the largest index, so the smallest indices survive
        v = n - 1 - int(np.argmin(masked[::-1]))
        alive[v] = False
        deg -= weights[:, v]
    return np.flatnonzero(alive).tolist()


def greedy_peeling(G: WeightedGraph, k: int) -> SuperArm:
    """Repeatedly delete a minimum weighted-degree vertex until ``k`` remain.

    Ties are broken by deleting the largest index, which keeps the result
    lexicographically smallest among equally dense choices.
    """
    if not 1 <= k <= G.n:
        raise ValueError(f"k must be in [1, {G.n}], got {k}")
    return SuperArm(tuple(_peel(G.weights, k)), G.n)


class GreedyPeeling:
    """Greedy peeling as a DkS oracle.

    ``guarantee`` is the approximation ratio the oracle declares for
    certificates.  Greedy peeling has no ratio proved for weighted graphs of
    this kind, so the default is the empirical value 0.9 used in practice;
    pass a provable value if one is needed.
    """

    name = "greedy_peeling"

    def __init__(self, guarantee: float = 0.9):
        if not 0 < guarantee <= 1:
            raise ValueError("guarantee must lie in (0, 1]")
        self.guarantee = guarantee

    def __call__(self, G: WeightedGraph, k: int) -> SuperArm:
        return greedy_peeling(G, k)


class ExactDkS:
    """Exhaustive DkS oracle (ratio 1); only for small instances."""

    name = "exact"
    guarantee = 1.0

    def __init__(self, budget: int = DEFAULT_BUDGET):
        self.budget = budget

    def __call__(self, G: WeightedGraph, k: int) -> SuperArm:
        # w(S) for a zero-diagonal matrix is half the quadratic form
        sol = brute_force_qp(G.weights, k, budget=self.budget)
        return sol.subset


@dataclass(frozen=True)
class QpSolution:
    subset: SuperArm
    qp_value: float
    certificate: float | None = None
    spectrum: SpectralSummary | None = None
    clamped: int = 0


def qp_value(W, subset) -> float:
    idx = list(subset)
    return float(np.asarray(W)[np.ix_(idx, idx)].sum())


def ratio_certificate(k: int, lambda_min: float, lambda_max: float, alpha_dks: float) -> float:
    """Approximation ratio (1/(k-1)) * (lambda_min/lambda_max) * alpha_DkS."""
    if k < 2:
        raise ValueError("certificate needs k >= 2")
    return (lambda_min / lambda_max) * alpha_dks / (k - 1)


def quadratic_maximize(W, k: int, oracle=None, spectrum: SpectralSummary | None = None,
                       certify: bool = True) -> QpSolution:
    """Approximately maximize chi^T W chi over |chi| = k.

    With ``certify`` (default) W must be positive definite and the solution
    carries the ratio certificate; conservatively, lambda_min is lowered and
    lambda_max raised by the eigen-solver residual.  ``certify=False`` skips
    the PD check and the certificate (used for indefinite surrogates, whose
    reduction graph is clamped).
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if k < 2:
        raise ValueError("quadratic_maximize needs k >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    oracle = oracle or GreedyPeeling()
    cert = None
    if certify:
        if spectrum is None:
            spectrum = extreme_eigenvalues(W)
        if spectrum.lambda_min - spectrum.residual <= 0:
            raise NotPositiveDefiniteError(
                f"W is not positive definite (lambda_min = {spectrum.lambda_min:.3e})"
            )
        cert = ratio_certificate(k, spectrum.lambda_min - spectrum.residual,
                                    spectrum.lambda_max + spectrum.residual, oracle.guarantee)
    G = build_reduction_graph(W)
    subset = oracle(G, k)
    return QpSolution(subset, qp_value(W, subset.indices), cert, spectrum, G.clamped)


def _combination_chunks(n: int, k: int, chunk: int):
    it = itertools.combinations(range(n), k)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp)


def brute_force_qp(W, k: int, budget: int = DEFAULT_BUDGET) -> QpSolution:
    """Exact maximizer of chi^T W chi by enumeration (first in lexicographic order on ties)."""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    count = math.comb(n, k)
    if count > budget:
        raise BudgetExceededError(f"C({n},{k}) = {count} exceeds the enumeration budget {budget}")
    best_val, best_idx = -math.inf, None
    for combos in _combination_chunks(n, k, 50_000):
        vals = W[combos[:, :, None], combos[:, None, :]].sum(axis=(1, 2))
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_idx = float(vals[i]), tuple(int(c) for c in combos[i])
    return QpSolution(SuperArm(best_idx, n), best_val)
