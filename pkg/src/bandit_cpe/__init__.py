"""Combinatorial pure exploration with full-bandit linear feedback."""

from .allocation import (
    Allocation,
    NonIdentifiableError,
    Tracker,
    candidate_support,
    complexity_report,
    cyclic_design,
    g_allocation,
    next_pull,
    round_allocation,
    uniform_allocation,
)
from .core import (
    DecisionClass,
    InconsistentOracleError,
    Matroid,
    SuperArm,
    TopK,
    best_super_arm,
    gap_report,
    linear_maximize,
    partition_matroid,
)
from .dks import (
    ExactDkS,
    GreedyPeeling,
    brute_force_qp,
    build_reduction_graph,
    greedy_peeling,
    quadratic_maximize,
)
from .environments import (
    CrowdEnv,
    InstanceSpec,
    SyntheticEnv,
    generate_synthetic,
    ingest_crowd,
)
from .identification import (
    ConfidenceParams,
    RunResult,
    conf_radius_ellipsoid,
    conf_radius_independent,
    run_algorithm,
    run_exhaustive,
    run_icb,
    run_safoa,
    run_saqm,
)
from .linalg import DesignState, ellipsoid_norm, extreme_eigenvalues

__version__ = "0.1.0"
