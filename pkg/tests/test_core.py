import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from bandit_cpe.core import (
    InconsistentOracleError,
    Matroid,
    SuperArm,
    TopK,
    best_super_arm,
    gap_report,
    linear_maximize,
    partition_matroid,
    super_arm_value,
)
from conftest import brute_best


def test_super_arm_validation_and_equality():
    a = SuperArm.of([2, 0], 4)
    assert a.indices == (0, 2)
    assert_allclose(a.indicator(), [1, 0, 1, 0])
    assert a == SuperArm((0, 2), 7)
    assert hash(a) == hash(SuperArm((0, 2), 4))
    with pytest.raises(ValueError):
        SuperArm((2, 1), 4)
    with pytest.raises(ValueError):
        SuperArm((1, 1), 4)
    with pytest.raises(ValueError):
        SuperArm((0, 4), 4)


def test_best_super_arm_examples():
    assert best_super_arm([1, 2, 3], TopK(3, 2)).indices == (1, 2)
    assert best_super_arm([5, 5, 0], TopK(3, 2)).indices == (0, 1)
    m = partition_matroid(4, [[0, 1], [2, 3]], [1, 1])
    assert best_super_arm([3, 2, 2, 1], m).indices == (0, 2)


def test_best_super_arm_dimension_mismatch():
    with pytest.raises(ValueError):
        best_super_arm([1, 2], TopK(3, 2))
    with pytest.raises(ValueError):
        best_super_arm([1, np.nan, 2], TopK(3, 2))


def test_linear_maximize_examples():
    dc = TopK(3, 2)
    arm, val = linear_maximize([3, 2, 1], dc)
    assert arm.indices == (0, 1) and val == 5
    arm, val = linear_maximize([3, 2, 1], dc, exclude=SuperArm((0, 1), 3))
    assert arm.indices == (0, 2) and val == 4
    arm, val = linear_maximize([1, 1, 1], TopK(3, 3))
    assert arm.indices == (0, 1, 2) and val == 3
    with pytest.raises(ValueError):
        linear_maximize([1, 1, 1], TopK(3, 3), exclude=SuperArm((0, 1, 2), 3))


def test_topk_requires_k_at_least_two():
    with pytest.raises(ValueError):
        TopK(5, 1)
    with pytest.raises(ValueError):
        TopK(3, 4)
    assert_allclose(TopK(10, 5).size, 252)


def test_gap_report_examples():
    g = gap_report([1.0, 0.7, 0.2], TopK(3, 2))
    assert g.best.indices == (0, 1)
    assert_allclose(g.delta_min, 0.5, atol=1e-12)
    assert gap_report([1, 1, 1], TopK(3, 2)).delta_min == 0
    with pytest.raises(ValueError):
        gap_report([1, 1, 1], TopK(3, 3))


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.integers(2, n),
    st.lists(st.integers(-3, 3), min_size=n, max_size=n))))
def test_topk_matches_enumeration(args):
    # small integer weights make ties frequent, exercising the lexicographic rule
    n, k, w = args
    w = np.asarray(w, dtype=float)
    dc = TopK(n, k)
    best = dc.best(w)
    assert best.indices == brute_best(w, n, k)[0]
    if k < n:
        arm, val = dc.linear_maximize(w, exclude=best)
        ref, ref_val = brute_best(w, n, k, exclude=best.indices)
        assert arm != best
        assert arm.indices == ref
        assert_allclose(val, ref_val)
        # exclusion of a non-optimal set returns the unconstrained best
        other = SuperArm(tuple(range(n - k, n)), n)
        if other != best:
            assert dc.linear_maximize(w, exclude=other)[0] == best


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 10), st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_scaling_leaves_argmax_unchanged(n, seed, c):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=n)
    dc = TopK(n, n // 2)
    b = dc.best(w)
    assert dc.best(c * w) == b
    assert dc.linear_maximize(c * w, exclude=b)[0] == dc.linear_maximize(w, exclude=b)[0]


def _random_partition_matroid(rng, n):
    nb = int(rng.integers(1, 4))
    labels = rng.integers(0, nb, size=n)
    blocks = [np.flatnonzero(labels == b).tolist() for b in range(nb)]
    blocks = [b for b in blocks if b]
    caps = [int(rng.integers(1, len(b) + 1)) for b in blocks]
    return partition_matroid(n, blocks, caps)


def _uniform_matroid(n, r):
    return Matroid(n, lambda s: len(s) <= r)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_matroid_greedy_matches_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    m = _random_partition_matroid(rng, n) if seed % 2 else _uniform_matroid(n, int(rng.integers(1, n + 1)))
    w = rng.uniform(0.1, 2.0, size=n)
    bases = list(m.enumerate())
    assert len(bases) == round(m.size)
    vals = [super_arm_value(w, b) for b in bases]
    assert_allclose(super_arm_value(w, m.best(w)), max(vals))
    # max-weight independent set with positive weights is a basis
    indep = [c for r in range(n + 1) for c in itertools.combinations(range(n), r) if m.independent(frozenset(c))]
    assert_allclose(max(vals), max(w[list(c)].sum() for c in indep))
    if len(bases) > 1:
        best = m.best(w)
        arm, val = m.linear_maximize(w, exclude=best)
        assert arm != best and m.contains(arm)
        assert_allclose(val, max(v for b, v in zip(bases, vals) if b != best))


def test_matroid_axioms_hold_for_partition_matroid():
    rng = np.random.default_rng(3)
    for n in range(2, 8):
        assert _random_partition_matroid(rng, n).check_axioms()


def test_inconsistent_oracle_detected():
    # accepts {0, 1} but rejects its subset {1}
    def bad(s):
        return s in (frozenset(), frozenset({0}), frozenset({0, 1}))

    m = Matroid(3, bad)
    with pytest.raises(InconsistentOracleError):
        m.best([0.0, 1.0, 0.0])
