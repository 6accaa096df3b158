"""Design-matrix bookkeeping and symmetric eigenvalue extremes.

``DesignState`` accumulates A = sum chi chi^T and b = sum chi r over the
pulled super-arms and keeps A^{-1} current with rank-one
(Sherman-Morrison) updates once A is invertible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SuperArm

PIVOT_THRESHOLD = 1e-10
REFRESH_EVERY = 1000


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, rank: int, n: int):
        super().__init__(f"design matrix is singular: rank {rank} < {n}")
        self.rank = rank
        self.n = n


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


def _cholesky_inverse(A: np.ndarray) -> np.ndarray | None:
    """Inverse of a symmetric PD matrix, or None below the pivot threshold."""
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(L)) ** 2 <= PIVOT_THRESHOLD:
        return None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


class DesignState:
    """Running least-squares statistics for full-bandit observations."""

    def __init__(self, n: int):
        self.n = n
        self.t = 0
        self.A = np.zeros((n, n))
        self.A_inv: np.ndarray | None = None
        self.b = np.zeros(n)
        self.theta_hat: np.ndarray | None = None
        self.pull_counts: dict[SuperArm, int] = {}
        self._since_refresh = 0

    @property
    def invertible(self) -> bool:
        return self.A_inv is not None

    def copy(self) -> "DesignState":
        other = DesignState(self.n)
        other.t = self.t
        other.A = self.A.copy()
        other.A_inv = None if self.A_inv is None else self.A_inv.copy()
        other.b = self.b.copy()
        other.theta_hat = None if self.theta_hat is None else self.theta_hat.copy()
        other.pull_counts = dict(self.pull_counts)
        other._since_refresh = self._since_refresh
        return other

    def update(self, arm: SuperArm, reward: float) -> "DesignState":
        if arm.n != self.n:
            raise ValueError(f"super-arm dimension {arm.n} != {self.n}")
        self._update_indices(list(arm.indices), reward)
        self.pull_counts[arm] = self.pull_counts.get(arm, 0) + 1
        return self

    def _update_indices(self, idx, reward: float) -> None:
        if not np.isfinite(reward):
            raise ValueError(f"reward must be finite, got {reward}")
        ix = np.ix_(idx, idx)
        self.A[ix] += 1.0
        self.b[idx] += reward
        self.t += 1
        if self.A_inv is None:
            self._try_invert()
            return
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY:
            self._refresh()
            return
        u = self.A_inv[:, idx].sum(axis=1)
        denom = 1.0 + u[idx].sum()
        self.A_inv -= np.outer(u, u) / denom
        self.theta_hat = self.A_inv @ self.b

    def update_batch(self, arms, counts, reward_sums, X=None) -> "DesignState":
        """Fold ``counts[i]`` pulls of ``arms[i]`` with summed rewards at once.

        A^{-1} is recomputed directly; the result equals ``counts[i]``
        successive calls to :meth:`update` up to rounding.  ``X`` may carry
        the precomputed indicator rows of ``arms``.
        """
        counts = np.asarray(counts, dtype=float)
        reward_sums = np.asarray(reward_sums, dtype=float)
        if not np.all(np.isfinite(reward_sums)):
            raise ValueError("reward sums must be finite")
        if X is None:
            X = np.stack([a.indicator() for a in arms]) if len(arms) else np.zeros((0, self.n))
        self.A += X.T @ (counts[:, None] * X)
        self.b += X.T @ reward_sums
        for a, c in zip(arms, counts):
            if c:
                self.pull_counts[a] = self.pull_counts.get(a, 0) + int(c)
        self.t += int(counts.sum())
        self._try_invert()
        return self

    def _try_invert(self) -> None:
        self.A_inv = _cholesky_inverse(self.A)
        self._since_refresh = 0
        self.theta_hat = None if self.A_inv is None else self.A_inv @ self.b

    def _refresh(self) -> None:
        inv = _cholesky_inverse(self.A)
        if inv is not None:
            self.A_inv = inv
        self._since_refresh = 0
        self.theta_hat = self.A_inv @ self.b

    def require_inverse(self) -> np.ndarray:
        if self.A_inv is None:
            raise SingularDesignError(int(np.linalg.matrix_rank(self.A)), self.n)
        return self.A_inv


def ellipsoid_norm(state: DesignState, x) -> float:
    """||x||_{A^{-1}} = sqrt(x^T A^{-1} x)."""
    A_inv = state.require_inverse()
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(x @ A_inv @ x, 0.0)))


@dataclass(frozen=True)
class SpectralSummary:
    lambda_min: float
    lambda_max: float
    iterations: int
    residual: float
    vec_min: np.ndarray | None = None
    vec_max: np.ndarray | None = None
    basis_min: np.ndarray | None = field(default=None, repr=False)
    basis_max: np.ndarray | None = field(default=None, repr=False)

    def conservative_ratio(self) -> float:
        """lambda_min / lambda_max with both ends widened by the residual."""
        lo = self.lambda_min - self.residual
        hi = self.lambda_max + self.residual
        return lo / hi if hi > 0 else 0.0


BLOCK = 8


def _power(M: np.ndarray, X: np.ndarray, tol: float, max_iter: int):
    """Dominant eigenpair of a PSD matrix by block power iteration.

    The block is re-orthonormalized every step and rotated by Rayleigh-Ritz,
    so clustered leading eigenvalues do not stall convergence.  Stops on the
    residual ||Mx - mu x|| of the leading Ritz pair.
    """
    mu, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        Y = M @ X
        H = X.T @ Y
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        X = X @ V[:, ::-1]
        Y = Y @ V[:, ::-1]
        mu = float(w[-1])
        x = X[:, 0]
        res = float(np.linalg.norm(Y[:, 0] - mu * x))
        if res <= tol:
            return mu, X, it, res
        if not np.any(Y):
            return 0.0, X, it, 0.0
        X, _ = np.linalg.qr(Y)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", res)


def extreme_eigenvalues(W, tol: float = 1e-8, max_iter: int = 100_000, x0_max=None, x0_min=None,
                        seed: int = 0, W_inv=None) -> SpectralSummary:
    """Smallest and largest eigenvalues of a symmetric matrix by power iteration.

    The matrix is shifted by a Gershgorin lower bound so the dominant
    eigenvalue is the largest one even for indefinite input; the smallest
    eigenvalue then comes from power iteration on lambda_max * I - W.
    ``tol`` is relative to the Gershgorin spectral radius bound.  Starting
    vectors (or blocks, as returned in ``basis_max``/``basis_min``) may be
    passed to warm-start a sequence of nearby matrices.

    When the inverse of a positive definite W is at hand (``W_inv``),
    lambda_min is taken as 1 / lambda_max(W_inv) instead; that iteration
    converges much faster when the low end of the spectrum is separated
    from the rest, as it is for inverse design matrices.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    if np.max(np.abs(W - W.T), initial=0.0) > 1e-10:
        raise ValueError("W must be symmetric")
    W = 0.5 * (W + W.T)
    n = W.shape[0]
    b = min(BLOCK, n)
    radii = np.abs(W).sum(axis=1) - np.abs(np.diag(W))
    lo = float(np.min(np.diag(W) - radii))
    hi = float(np.max(np.diag(W) + radii))
    scale = max(abs(lo), abs(hi), np.finfo(float).tiny)
    atol = tol * scale
    rng = np.random.default_rng(seed)

    def start(x0):
        X = rng.standard_normal((n, b))
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float).reshape(n, -1)[:, :b]
            X[:, :x0.shape[1]] = x0
        Q, R = np.linalg.qr(X)
        if np.min(np.abs(np.diag(R))) < 1e-12:
            Q, _ = np.linalg.qr(rng.standard_normal((n, b)))
        return Q

    shift = min(lo, 0.0)
    I = np.eye(n)
    mu, Bmax, it1, r1 = _power(W - shift * I, start(x0_max), atol, max_iter)
    lam_max = mu + shift
    if W_inv is None:
        mu2, Bmin, it2, r2 = _power(lam_max * I - W, start(x0_min), atol, max_iter)
        lam_min = min(lam_max - mu2, lam_max)
    else:
        V = np.asarray(W_inv, dtype=float)
        V = 0.5 * (V + V.T)
        vscale = max(float(np.max(np.abs(V).sum(axis=1))), np.finfo(float).tiny)
        mu2, Bmin, it2, rv = _power(V, start(x0_min), tol * vscale, max_iter)
        if mu2 <= 0:
            raise ValueError("W_inv is not positive definite")
        lam_min = min(1.0 / mu2, lam_max)
        # some eigenvalue of W_inv lies within rv of mu2, so lambda_min >= 1 / (mu2 + rv)
        r2 = lam_min - 1.0 / (mu2 + rv)
    return SpectralSummary(lam_min, lam_max, it1 + it2, max(r1, r2), Bmin[:, 0], Bmax[:, 0], Bmin, Bmax)


def condition_number(state: DesignState) -> float:
    """lambda_max(A) / lambda_min(A)."""
    state.require_inverse()
    s = extreme_eigenvalues(state.A)
    if s.lambda_min <= 0:
        raise SingularDesignError(int(np.linalg.matrix_rank(state.A)), state.n)
    return s.lambda_max / s.lambda_min
