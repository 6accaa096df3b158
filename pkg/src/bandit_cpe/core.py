"""Super-arms, decision classes and gap computations.

A super-arm is a set of single-arm indices.  A decision class is the family
of feasible super-arms: either every size-k subset of ``n`` arms (``TopK``) or
the bases of a matroid given through an independence oracle (``Matroid``).

Ties are always broken towards the lexicographically smallest sorted index
list so that every maximizer in this package is deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


class InconsistentOracleError(ValueError):
    """The independence oracle violates the hereditary matroid axiom."""


@dataclass(frozen=True, eq=False)
class SuperArm:
    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"indices must be strictly increasing, got {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise ValueError(f"indices {idx} out of range for n={self.n}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices, n: int) -> "SuperArm":
        return cls(tuple(sorted(int(i) for i in indices)), n)

    def indicator(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[list(self.indices)] = 1.0
        return x

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, e) -> bool:
        return e in self.indices

    def __eq__(self, other) -> bool:
        if not isinstance(other, SuperArm):
            return NotImplemented
        return self.indices == other.indices

    def __hash__(self) -> int:
        return hash(self.indices)

    def __lt__(self, other: "SuperArm") -> bool:
        return self.indices < other.indices

    def __repr__(self) -> str:
        return f"SuperArm({list(self.indices)})"


def super_arm_value(theta, arm: SuperArm) -> float:
    """theta(M), the sum of expected rewards over the arms of ``arm``."""
    theta = np.asarray(theta, dtype=float)
    return float(theta[list(arm.indices)].sum())


class DecisionClass:
    """Common interface of the feasible families.

    Subclasses implement ``_argmax`` and ``_argmax_excluding`` on raw index
    tuples; the public methods wrap them in ``SuperArm``.
    """

    n: int
    log_size: float

    @property
    def size(self) -> float:
        return math.exp(self.log_size)

    def _check_weights(self, weights) -> np.ndarray:
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.n,):
            raise ValueError(f"expected {self.n} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        return w

    def contains(self, arm: SuperArm) -> bool:
        raise NotImplementedError

    def enumerate(self) -> Iterator[SuperArm]:
        raise NotImplementedError

    def _argmax(self, w: np.ndarray) -> tuple[int, ...]:
        raise NotImplementedError

    def _argmax_excluding(self, w: np.ndarray, exclude: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def best(self, weights) -> SuperArm:
        w = self._check_weights(weights)
        return SuperArm(self._argmax(w), self.n)

    def linear_maximize(self, weights, exclude: SuperArm | None = None) -> tuple[SuperArm, float]:
        w = self._check_weights(weights)
        if exclude is None:
            idx = self._argmax(w)
        else:
            if self.log_size < math.log(2) - 1e-12:
                raise ValueError("cannot exclude the only feasible super-arm (K = 1)")
            idx = self._argmax_excluding(w, exclude.indices)
        return SuperArm(idx, self.n), float(w[list(idx)].sum())


def _lex_min_topk(w: np.ndarray, k: int) -> tuple[int, ...]:
    # stable ordering by (-w, index) keeps the smallest indices among ties
    order = np.lexsort((np.arange(w.size), -w))
    return tuple(sorted(int(i) for i in order[:k]))


@dataclass(frozen=True)
class TopK(DecisionClass):
    """All size-k subsets of ``n`` arms (the uniform matroid of rank k)."""

    n: int
    k: int
    log_size: float = field(init=False)

    def __post_init__(self):
        if not 2 <= self.k <= self.n:
            raise ValueError(f"TopK requires 2 <= k <= n, got n={self.n}, k={self.k}")
        object.__setattr__(self, "log_size", _log_comb(self.n, self.k))

    def contains(self, arm: SuperArm) -> bool:
        return arm.n == self.n and len(arm) == self.k

    def enumerate(self) -> Iterator[SuperArm]:
        for c in itertools.combinations(range(self.n), self.k):
            yield SuperArm(c, self.n)

    def _argmax(self, w):
        return _lex_min_topk(w, self.k)

    def _argmax_excluding(self, w, exclude):
        best = self._argmax(w)
        if best != tuple(exclude):
            return best
        inside = np.array(best)
        mask = np.ones(self.n, dtype=bool)
        mask[inside] = False
        outside = np.flatnonzero(mask)
        w_in, w_out = w[inside], w[outside]
        drops = inside[w_in == w_in.min()]
        adds = outside[w_out == w_out.max()]
        cands = []
        base = set(best)
        for d in drops:
            for a in adds:
                cands.append(tuple(sorted((base - {int(d)}) | {int(a)})))
        return min(cands)


@dataclass(frozen=True)
class Matroid(DecisionClass):
    """Bases of a matroid on ``n`` elements given by an independence oracle.

    ``independent`` receives a frozenset of element ids.  The rank is found
    by the greedy algorithm.  ``log_size`` counts the bases exactly when the
    candidate family is small enough, otherwise it uses log C(n, rank), which
    is an upper bound and therefore conservative inside confidence radii.
    """

    n: int
    independent: Callable[[frozenset], bool]
    enumeration_budget: int = 200_000
    rank: int = field(init=False)
    log_size: float = field(init=False)

    def __post_init__(self):
        if not self.independent(frozenset()):
            raise InconsistentOracleError("the empty set must be independent")
        basis = self._greedy(np.zeros(self.n))
        object.__setattr__(self, "rank", len(basis))
        if math.comb(self.n, self.rank) <= self.enumeration_budget:
            count = sum(1 for _ in self.enumerate())
            log_size = math.log(count) if count else -math.inf
        else:
            log_size = _log_comb(self.n, self.rank)
        object.__setattr__(self, "log_size", log_size)

    def _greedy(self, w: np.ndarray) -> tuple[int, ...]:
        order = np.lexsort((np.arange(self.n), -w))
        chosen: set[int] = set()
        rejected = []
        for e in order:
            e = int(e)
            if self.independent(frozenset(chosen | {e})):
                chosen.add(e)
            else:
                rejected.append(e)
        final = frozenset(chosen)
        for e in rejected:
            # e was rejected against a subset of `final`, so final + e must be dependent too
            if self.independent(final | {e}):
                raise InconsistentOracleError(
                    f"oracle accepts {sorted(final | {e})} but rejected one of its subsets"
                )
        return tuple(sorted(chosen))

    def contains(self, arm: SuperArm) -> bool:
        return arm.n == self.n and len(arm) == self.rank and self.independent(frozenset(arm.indices))

    def enumerate(self) -> Iterator[SuperArm]:
        for c in itertools.combinations(range(self.n), self.rank):
            if self.independent(frozenset(c)):
                yield SuperArm(c, self.n)

    def _argmax(self, w):
        return self._greedy(w)

    def _argmax_excluding(self, w, exclude):
        best = self._greedy(w)
        if best != tuple(exclude):
            return best
        # the second-best basis is one exchange away from the best one
        base = set(best)
        best_val, best_sets = -math.inf, []
        total = w[list(best)].sum()
        for x in best:
            for y in range(self.n):
                if y in base:
                    continue
                cand = (base - {x}) | {y}
                if not self.independent(frozenset(cand)):
                    continue
                val = total - w[x] + w[y]
                if val > best_val:
                    best_val, best_sets = val, [tuple(sorted(cand))]
                elif val == best_val:
                    best_sets.append(tuple(sorted(cand)))
        if not best_sets:
            raise ValueError("matroid has a single basis; exclusion impossible")
        return min(best_sets)

    def check_axioms(self) -> bool:
        """Exhaustively verify the three matroid axioms (small ``n`` only)."""
        sets = [frozenset(c) for r in range(self.n + 1) for c in itertools.combinations(range(self.n), r)]
        indep = {s for s in sets if self.independent(s)}
        if frozenset() not in indep:
            return False
        for s in indep:
            for e in s:
                if s - {e} not in indep:
                    return False
        for x in indep:
            for y in indep:
                if len(x) < len(y) and not any(x | {e} in indep for e in y - x):
                    return False
        return True


def partition_matroid(n: int, blocks: Sequence[Sequence[int]], capacities: Sequence[int]) -> Matroid:
    """Matroid allowing at most ``capacities[b]`` elements from ``blocks[b]``."""
    owner = {}
    for b, block in enumerate(blocks):
        for e in block:
            owner[int(e)] = b
    if sorted(owner) != list(range(n)):
        raise ValueError("blocks must partition range(n)")
    caps = list(capacities)

    def independent(s: frozenset) -> bool:
        used = [0] * len(caps)
        for e in s:
            used[owner[e]] += 1
        return all(u <= c for u, c in zip(used, caps))

    return Matroid(n, independent)


def best_super_arm(theta, dc: DecisionClass) -> SuperArm:
    """Feasible super-arm maximizing theta(M)."""
    return dc.best(theta)


def linear_maximize(weights, dc: DecisionClass, exclude: SuperArm | None = None) -> tuple[SuperArm, float]:
    return dc.linear_maximize(weights, exclude)


@dataclass(frozen=True)
class GapReport:
    best: SuperArm
    delta_min: float
    theta: np.ndarray = field(repr=False)

    def gap(self, m: SuperArm, m_prime: SuperArm) -> float:
        return super_arm_value(self.theta, m) - super_arm_value(self.theta, m_prime)


def gap_report(theta, dc: DecisionClass) -> GapReport:
    theta = dc._check_weights(theta)
    if dc.log_size < math.log(2) - 1e-12:
        raise ValueError("gap undefined for a decision class with fewer than two super-arms")
    best = dc.best(theta)
    _, runner_up = dc.linear_maximize(theta, exclude=best)
    delta = super_arm_value(theta, best) - runner_up
    return GapReport(best, max(delta, 0.0), theta.copy())


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
