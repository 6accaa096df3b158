"""Reward environments with full-bandit feedback.

Every environment answers ``pull(M)`` with a single real number: the sum of
the rewards of the arms in ``M``.  ``pull_many`` draws a whole sequence at
once and returns the same values as repeated ``pull`` calls.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SuperArm, TopK, gap_report

log = logging.getLogger(__name__)

NOISE_KINDS = ("gaussian", "uniform", "none")


class DataFormatError(ValueError):
    pass


class SyntheticEnv:
    """theta(M) plus independent per-arm noise, summed over the pulled arms.

    ``noise`` is ``"gaussian"`` (N(0, scale^2)), ``"uniform"`` (U[-scale,
    scale]) or ``"none"``.  ``noise_bound`` is the R used in confidence
    radii; for Gaussian noise it is the standard deviation, which is only a
    surrogate since Gaussian noise is unbounded.
    """

    def __init__(self, theta, noise: str = "gaussian", scale: float = 1.0, seed: int | None = 0):
        if noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        self.theta = theta
        self.n = theta.size
        self.noise = noise
        self.scale = float(scale)
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    @property
    def noise_bound(self) -> float:
        return self.scale if self.noise != "none" else 0.0

    def clone(self, seed: int | None = None) -> "SyntheticEnv":
        return SyntheticEnv(self.theta, self.noise, self.scale, self.seed if seed is None else seed)

    def _noise(self, size):
        if self.noise == "gaussian":
            return self.rng.normal(0.0, self.scale, size=size)
        if self.noise == "uniform":
            return self.rng.uniform(-self.scale, self.scale, size=size)
        return np.zeros(size)

    def pull(self, arm: SuperArm) -> float:
        idx = list(arm.indices)
        return float(self.theta[idx].sum() + self._noise(len(idx)).sum())

    def pull_many(self, arms) -> np.ndarray:
        """Rewards of successive pulls; ``arms`` may also be an (m, k) index array."""
        if not len(arms):
            return np.zeros(0)
        if isinstance(arms, np.ndarray):
            idx = arms
        else:
            k = len(arms[0])
            if any(len(a) != k for a in arms):
                return np.array([self.pull(a) for a in arms])
            idx = np.array([a.indices for a in arms], dtype=np.intp)
        k = idx.shape[1]
        means = self.theta[idx].sum(axis=1)
        return means + self._noise((len(arms), k)).sum(axis=1)


@dataclass(frozen=True)
class InstanceSpec:
    n: int
    k: int
    delta_min: float
    seed: int = 0


def synthetic_theta(spec: InstanceSpec) -> np.ndarray:
    """Gap-controlled rewards: top-k uniform on [0, 1], the (k+1)-th exactly
    delta_min below the smallest of them, the rest uniform on
    [-1, theta_min_k - delta_min].  Arm positions are randomly permuted.
    """
    n, k, dm = spec.n, spec.k, spec.delta_min
    if not 0.0 <= dm <= 1.0:
        raise ValueError(f"delta_min must lie in [0, 1], got {dm}")
    if not (2 <= k and k + 1 <= n):
        raise ValueError(f"need 2 <= k and k + 1 <= n, got n={n}, k={k}")
    rng = np.random.default_rng(spec.seed)
    top = rng.uniform(0.0, 1.0, size=k)
    ceiling = top.min() - dm
    rest = rng.uniform(-1.0, ceiling, size=n - k - 1)
    values = np.concatenate([top, [ceiling], rest])
    return values[rng.permutation(n)]


def generate_synthetic(spec: InstanceSpec, noise: str = "gaussian", scale: float = 1.0,
                       noise_seed: int | None = None) -> SyntheticEnv:
    theta = synthetic_theta(spec)
    return SyntheticEnv(theta, noise, scale, spec.seed if noise_seed is None else noise_seed)


@dataclass(frozen=True)
class CrowdSummary:
    tasks: int
    workers: int
    average: float
    best: float

    def table_row(self, name: str) -> str:
        return f"{name},{self.tasks},{self.workers},{self.average:.2f},{self.best:.2f}"


class CrowdEnv:
    """Crowdsourcing environment: arms are workers, a pull scores one random task.

    ``correct[t, w]`` is 1 when worker ``w`` labelled task ``t`` with its gold
    label; missing labels count as 0.  ``theta`` is the expected per-pull
    reward of each worker, i.e. its correct count divided by the task count.
    """

    def __init__(self, correct: np.ndarray, attempted: np.ndarray, task_ids, worker_ids, seed: int | None = 0):
        self.correct = np.asarray(correct, dtype=float)
        self.attempted = np.asarray(attempted, dtype=bool)
        self.task_ids = list(task_ids)
        self.worker_ids = list(worker_ids)
        self.n = self.correct.shape[1]
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        n_att = self.attempted.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.where(n_att > 0, self.correct.sum(axis=0) / np.maximum(n_att, 1), 0.0)
        for w in np.flatnonzero(n_att == 0):
            log.warning("worker %s has no labelled task; accuracy set to 0", self.worker_ids[w])
        self.accuracy = acc
        self.theta = self.correct.mean(axis=0)

    noise_bound = 1.0

    def clone(self, seed: int | None = None) -> "CrowdEnv":
        return CrowdEnv(self.correct, self.attempted, self.task_ids, self.worker_ids,
                        self.seed if seed is None else seed)

    def summary(self) -> CrowdSummary:
        return CrowdSummary(len(self.task_ids), len(self.worker_ids),
                            float(self.accuracy.mean()), float(self.accuracy.max()))

    def pull(self, arm: SuperArm) -> float:
        task = int(self.rng.integers(len(self.task_ids)))
        return float(self.correct[task, list(arm.indices)].sum())

    def pull_many(self, arms) -> np.ndarray:
        """Rewards of successive pulls; ``arms`` may also be an (m, k) index array."""
        if isinstance(arms, np.ndarray):
            tasks = [int(self.rng.integers(len(self.task_ids))) for _ in range(len(arms))]
            return self.correct[np.asarray(tasks, dtype=np.intp)[:, None], arms].sum(axis=1)
        return np.array([self.pull(a) for a in arms])


def _read_rows(path, header, optional=()):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(header) or any(
                not c.strip() for i, c in enumerate(row) if i not in optional
            ):
                raise DataFormatError(f"{path}:{reader.line_num}: malformed row {row!r}")
            yield reader.line_num, [c.strip() for c in row]


def ingest_crowd(labels_file, truth_file, seed: int | None = 0) -> CrowdEnv:
    """Build a ``CrowdEnv`` from ``task_id,worker_id,label`` and ``task_id,label`` CSVs.

    Workers become arms in order of first appearance in the labels file.  An
    empty label registers the worker for the task without an answer.
    """
    truth = {}
    for line, (task, label) in _read_rows(truth_file, ["task_id", "label"]):
        if task in truth:
            raise DataFormatError(f"{truth_file}:{line}: duplicate gold label for task {task}")
        truth[task] = label
    labels = {}
    tasks, workers = {}, {}
    for line, (task, worker, label) in _read_rows(labels_file, ["task_id", "worker_id", "label"], optional=(2,)):
        if task not in truth:
            raise DataFormatError(f"{labels_file}:{line}: task {task} has no gold label")
        if (task, worker) in labels:
            raise DataFormatError(f"{labels_file}:{line}: duplicate label for ({task}, {worker})")
        tasks.setdefault(task, len(tasks))
        workers.setdefault(worker, len(workers))
        if label:
            labels[task, worker] = label
    for task in truth:
        tasks.setdefault(task, len(tasks))
    correct = np.zeros((len(tasks), len(workers)))
    attempted = np.zeros_like(correct, dtype=bool)
    for (task, worker), label in labels.items():
        t, w = tasks[task], workers[worker]
        attempted[t, w] = True
        correct[t, w] = float(label == truth[task])
    return CrowdEnv(correct, attempted, list(tasks), list(workers), seed)


def true_gap(env, k: int) -> float:
    return gap_report(env.theta, TopK(env.n, k)).delta_min
