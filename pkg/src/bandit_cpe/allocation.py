"""Static allocation strategies over an explicit super-arm support.

An allocation is a probability vector on a finite support of super-arms.
The support has to span R^n for the least-squares estimate to exist.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import DecisionClass, SuperArm, TopK, gap_report

ENUMERATION_BUDGET = 1_000_000


class NonIdentifiableError(ValueError):
    """Support indicator vectors do not span R^n."""


def indicator_matrix(arms: Sequence[SuperArm]) -> np.ndarray:
    n = arms[0].n
    X = np.zeros((len(arms), n))
    for r, a in enumerate(arms):
        X[r, list(a.indices)] = 1.0
    return X


def spans(arms: Sequence[SuperArm]) -> bool:
    if not arms:
        return False
    X = indicator_matrix(arms)
    return int(np.linalg.matrix_rank(X)) == X.shape[1]


@dataclass(frozen=True)
class Allocation:
    support: tuple[SuperArm, ...]
    probs: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        probs = np.asarray(self.probs, dtype=float)
        if not support:
            raise ValueError("empty support")
        if probs.shape != (len(support),):
            raise ValueError("one probability per support element")
        if np.any(probs <= 0):
            raise ValueError("support probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if len(set(support)) != len(support):
            raise ValueError("duplicate super-arms in support")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return self.support[0].n

    @property
    def identifiable(self) -> bool:
        return spans(self.support)

    def design_matrix(self) -> np.ndarray:
        """Lambda_p = sum_M p_M chi_M chi_M^T."""
        X = indicator_matrix(self.support)
        return X.T @ (self.probs[:, None] * X)


def _normalized(p: np.ndarray) -> np.ndarray:
    p = p / p.sum()
    # push the residual rounding error onto the largest entry
    p[np.argmax(p)] += 1.0 - p.sum()
    return p


def uniform_allocation(support: Sequence[SuperArm]) -> Allocation:
    support = tuple(support)
    if not spans(support):
        raise NonIdentifiableError("support does not span R^n")
    s = len(support)
    return Allocation(support, _normalized(np.full(s, 1.0 / s)))


class CyclicBlocks(NamedTuple):
    arms: list[SuperArm]
    singular: bool


def circulant_eigenvalues(n: int, k: int) -> np.ndarray:
    """Eigenvalues of sum_i c_i c_i^T for the n cyclic blocks of k ones.

    The Gram matrix is circulant, so its eigenvalues are the DFT of its
    first row (entry j counts the blocks containing both 0 and j).
    """
    row = np.zeros(n)
    for i in range(n):
        block = [(i + j) % n for j in range(k)]
        if 0 in block:
            for e in block:
                row[e] += 1.0
    j = np.arange(n)
    return np.real(np.exp(2j * np.pi * np.outer(j, j) / n) @ row)


def companion_circulant_formula(n: int, k: int) -> np.ndarray:
    """k + cos(2 pi j / n) k (k - 1) for j = 0..n-1 (exact only for k = 2)."""
    j = np.arange(n)
    return k + np.cos(2 * np.pi * j / n) * k * (k - 1)


def cyclic_design(n: int, k: int) -> CyclicBlocks:
    """The n contiguous blocks {i, ..., i+k-1 mod n}, augmented until spanning.

    When the circulant Gram matrix is singular, blocks with their last
    element swapped for the next one ({i, ..., i+k-2, i+k}) are appended one
    at a time until the design spans R^n.
    """
    if not 2 <= k < n:
        raise ValueError(f"cyclic_design needs 2 <= k < n, got n={n}, k={k}")
    arms = [SuperArm.of([(i + j) % n for j in range(k)], n) for i in range(n)]
    eig = circulant_eigenvalues(n, k)
    singular = bool(np.min(eig) <= 1e-9 * np.max(eig))
    if singular:
        seen = set(arms)
        for i in itertools.cycle(range(n)):
            if spans(arms):
                break
            for shift in range(k, n):
                cand = SuperArm.of([(i + j) % n for j in range(k - 1)] + [(i + shift) % n], n)
                if cand not in seen:
                    arms.append(cand)
                    seen.add(cand)
                    break
            if len(seen) >= math.comb(n, k):
                break
    return CyclicBlocks(arms, singular)


def random_bases(dc: DecisionClass, count: int, rng: np.random.Generator, exclude=()) -> list[SuperArm]:
    """Distinct random feasible super-arms (greedy on random weights)."""
    out, seen = [], set(exclude)
    attempts = 0
    while len(out) < count and attempts < 50 * count + 100:
        attempts += 1
        arm = dc.best(rng.standard_normal(dc.n))
        if arm not in seen:
            seen.add(arm)
            out.append(arm)
    return out


def candidate_support(dc: DecisionClass, rng: np.random.Generator, size: int | None = None) -> list[SuperArm]:
    """Cyclic blocks (TopK) plus random feasible super-arms up to ``3n`` candidates."""
    n = dc.n
    target = 3 * n if size is None else size
    if isinstance(dc, TopK) and dc.k < n:
        arms = list(cyclic_design(n, dc.k).arms)
    else:
        arms = []
    target = min(target, int(round(dc.size)) if dc.log_size < 30 else target)
    arms += random_bases(dc, max(target - len(arms), 0), rng, exclude=arms)
    while not spans(arms):
        extra = random_bases(dc, 1, rng, exclude=arms)
        if not extra:
            raise NonIdentifiableError("decision class does not span R^n")
        arms += extra
    return arms


def _max_norms(X: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Lam = X.T @ (p[:, None] * X)
    Linv = np.linalg.inv(Lam)
    return np.einsum("ij,jk,ik->i", X, Linv, X), Linv


def g_allocation(dc: DecisionClass, support: Sequence[SuperArm], iters: int = 500,
                 step: str = "harmonic", history: list | None = None) -> Allocation:
    """Relaxed G-optimal design on ``support`` by Frank-Wolfe iterations.

    Each iteration moves mass 2/(it+2) towards the candidate with the largest
    ||chi||^2_{Lambda_p^{-1}} (a Frank-Wolfe step on log det Lambda_p, whose
    optimum is also G-optimal).  The iterate with the smallest max-norm seen
    so far is kept, so the reported objective never increases.  Entries below
    1e-6 are pruned afterwards when the pruned support still spans.
    """
    support = tuple(support)
    if any(not dc.contains(a) for a in support):
        raise ValueError("support contains infeasible super-arms")
    if not spans(support):
        raise NonIdentifiableError("candidate support does not span R^n")
    if step != "harmonic":
        raise ValueError(f"unknown step rule {step!r}")
    X = indicator_matrix(support)
    n = X.shape[1]
    s = len(support)
    p = np.full(s, 1.0 / s)
    norms, _ = _max_norms(X, p)
    best_p, best_obj = p.copy(), norms.max()
    if history is not None:
        history.append(float(best_obj))
    for it in range(iters):
        if best_obj <= n * (1 + 1e-9):
            break  # Kiefer-Wolfowitz lower bound reached
        j = int(np.argmax(norms))
        gamma = 2.0 / (it + 3.0)
        p = (1.0 - gamma) * p
        p[j] += gamma
        norms, _ = _max_norms(X, p)
        if norms.max() < best_obj:
            best_p, best_obj = p.copy(), norms.max()
        if history is not None:
            history.append(float(best_obj))
    p = best_p
    keep = p >= 1e-6
    if not keep.all() and spans([a for a, k in zip(support, keep) if k]):
        support = tuple(a for a, k in zip(support, keep) if k)
        p = p[keep]
    return Allocation(support, _normalized(p.copy()))


def round_allocation(p: Allocation, t: int) -> np.ndarray:
    """Efficient apportionment of ``t`` pulls to the support of ``p``.

    Starts from ceil((t - s/2) p_i) and adjusts one unit at a time: increase
    the argmin of t_i/p_i, or decrease the argmax of (t_i - 1)/p_i.
    """
    probs = p.probs
    s = len(probs)
    if t < s:
        raise ValueError(f"t={t} is smaller than the support size {s}")
    counts = np.ceil((t - 0.5 * s) * probs - 1e-9).astype(np.int64)
    counts = np.maximum(counts, 0)
    total = int(counts.sum())
    while total < t:
        j = int(np.argmin(counts / probs))
        counts[j] += 1
        total += 1
    while total > t:
        j = int(np.argmax((counts - 1) / probs))
        counts[j] -= 1
        total -= 1
    return counts


def next_pull(p: Allocation, counts) -> SuperArm:
    """Tracking rule: argmin_M T_M / p_M, ties to the first support element."""
    counts = np.asarray(counts, dtype=float)
    return p.support[int(np.argmin(counts / p.probs))]


class Tracker:
    """Incremental tracking rule; yields support positions in pull order."""

    def __init__(self, probs, counts=None):
        import heapq

        self._heapq = heapq
        self.probs = np.asarray(probs, dtype=float)
        self.counts = np.zeros(len(self.probs), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        self._heap = [(self.counts[i] / self.probs[i], i) for i in range(len(self.probs))]
        heapq.heapify(self._heap)

    def next(self) -> int:
        _, i = self._heapq.heappop(self._heap)
        self.counts[i] += 1
        self._heapq.heappush(self._heap, (self.counts[i] / self.probs[i], i))
        return i

    def take(self, m: int) -> np.ndarray:
        """The next ``m`` positions, identical to ``m`` calls of :meth:`next`.

        Position i is due at keys (T_i + j) / p_i, j = 0, 1, ...; the rule
        pops keys in (key, position) order, so the next m pulls are the m
        smallest such pairs.  Keys beyond (sum T + m) / sum p are never needed.
        """
        if m <= 0:
            return np.zeros(0, dtype=np.int64)
        c, q = self.counts, self.probs
        horizon = (c.sum() + m) / q.sum()
        reps = np.maximum(np.floor(horizon * q - c).astype(np.int64) + 2, 0)
        pos = np.repeat(np.arange(len(q)), reps)
        j = np.arange(len(pos)) - np.repeat(np.cumsum(reps) - reps, reps)
        keys = (c[pos] + j) / q[pos]
        out = pos[np.lexsort((pos, keys))[:m]]
        if len(out) < m:
            raise RuntimeError("tracking horizon too short")
        self.counts += np.bincount(out, minlength=len(q))
        self._heap = [(self.counts[i] / self.probs[i], i) for i in range(len(self.probs))]
        self._heapq.heapify(self._heap)
        return out.astype(np.int64)


@dataclass(frozen=True)
class ComplexityReport:
    rho: float
    rho_prime: float
    h_eps: float
    h_eps_prime: float
    exact: bool


def _all_indicator_rows(dc: DecisionClass) -> np.ndarray | None:
    if dc.log_size > math.log(ENUMERATION_BUDGET):
        return None
    if isinstance(dc, TopK):
        combos = np.array(list(itertools.combinations(range(dc.n), dc.k)), dtype=np.intp)
        X = np.zeros((len(combos), dc.n))
        np.put_along_axis(X, combos, 1.0, axis=1)
        return X
    return indicator_matrix(list(dc.enumerate()))


def complexity_report(p: Allocation, theta, dc: DecisionClass, eps: float,
                      rng: np.random.Generator | None = None, samples: int = 2000) -> ComplexityReport:
    """rho(p), rho'(p) and the complexities H_eps = rho / (Delta_min + eps)^2.

    Maxima over the decision class are exact when it can be enumerated (and
    rho' is always exact for TopK); otherwise they run over the support plus
    ``samples`` random super-arms and are lower bounds (``exact=False``).
    """
    Lam = p.design_matrix()
    try:
        Linv = np.linalg.inv(Lam)
    except np.linalg.LinAlgError:
        raise NonIdentifiableError("Lambda_p is singular") from None
    if not np.all(np.isfinite(Linv)) or np.linalg.matrix_rank(Lam) < p.n:
        raise NonIdentifiableError("Lambda_p is singular")
    d = np.sqrt(np.clip(np.diag(Linv), 0.0, None))
    X = _all_indicator_rows(dc)
    exact = X is not None
    if X is None:
        rng = rng or np.random.default_rng(0)
        X = indicator_matrix(list(p.support) + random_bases(dc, samples, rng, exclude=p.support))
    rho = float(np.einsum("ij,jk,ik->i", X, Linv, X).max())
    if isinstance(dc, TopK):
        # the symmetric difference of two size-k sets has at most 2 min(k, n-k) elements
        m = 2 * min(dc.k, dc.n - dc.k)
        rho_prime = float(np.sort(d)[::-1][:m].sum() ** 2)
    else:
        rho_prime = float(max((np.abs(X - x) @ d).max() for x in X) ** 2)
    delta_min = gap_report(theta, dc).delta_min
    denom = (delta_min + eps) ** 2
    return ComplexityReport(rho, rho_prime, rho / denom, rho_prime / denom, exact)
