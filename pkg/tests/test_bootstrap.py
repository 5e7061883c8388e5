import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valdebias.bootstrap import (
    _quantile_interval,
    bootstrap_ci,
    bootstrap_contrast,
    bootstrap_randomized,
    order_statistic_index,
    resample,
    widening_term,
)
from valdebias.contrast import debias_contrast
from valdebias.core import ErrorMatrix, child_generators, column_means
from valdebias.randomized import randomized_estimate


def test_widening_term_natural_log():
    assert widening_term(100) == 1 / (10 * math.log(100))


def test_order_statistic_convention():
    assert order_statistic_index(0.05, 1000) == 49
    assert order_statistic_index(0.95, 1000) == 949
    assert order_statistic_index(0.05, 10) == 0
    assert order_statistic_index(0.01, 2) == 0


def test_quantile_interval_picks_50th_and_950th():
    rep = np.random.default_rng(0).permutation(1000).astype(float)
    ci = _quantile_interval(3.0, rep, np.zeros(1000), 0.90, 100)
    assert (ci.shift_low, ci.shift_high) == (49.0, 949.0)
    w = widening_term(100)
    assert ci.lower == 3.0 + 49.0 - w and ci.upper == 3.0 + 949.0 + w


def test_resample_n2_enumeration():
    em = ErrorMatrix([[0.0], [1.0]])
    rng = np.random.default_rng(1)
    N = 100_000
    counts = {}
    for _ in range(N):
        key = tuple(resample(em, rng).losses[:, 0])
        counts[key] = counts.get(key, 0) + 1
    assert set(counts) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    se = math.sqrt(0.25 * 0.75 / N)
    for c in counts.values():
        assert abs(c / N - 0.25) < 5 * se


def test_resample_singleton_folds_is_identity():
    em = ErrorMatrix([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], np.array([2, 0, 1]))
    r = resample(em, np.random.default_rng(0))
    np.testing.assert_array_equal(r.losses, em.losses)
    np.testing.assert_array_equal(r.fold_of_row, em.fold_of_row)


def test_resample_keeps_fold_structure():
    folds = np.array([0, 1] * 10)
    em = ErrorMatrix(np.arange(20.0)[:, None], folds)
    rng = np.random.default_rng(2)
    for _ in range(50):
        r = resample(em, rng)
        np.testing.assert_array_equal(r.fold_of_row, folds)
        src = r.losses[:, 0].astype(int)
        assert np.all(folds[src] == folds)


@pytest.mark.parametrize("which", ["contrast", "randomized"])
@pytest.mark.parametrize("c", [0.0, 0.25, -3.5])
def test_constant_matrix_degenerate_interval(which, c):
    n = 64
    em = ErrorMatrix(np.full((n, 3), c))
    est = debias_contrast(em).estimate if which == "contrast" else randomized_estimate(em, rng=0).estimate
    if which == "contrast":
        assert est == c
    ci = bootstrap_ci(em, which, c, B=200, rng=np.random.default_rng(3))
    w = 1 / (math.sqrt(n) * math.log(n))
    if which == "contrast":
        assert ci.shift_low == 0.0 and ci.shift_high == 0.0
        assert ci.lower == c - w and ci.upper == c + w
        if c == 0.0:
            assert ci.width == 2 / (math.sqrt(n) * math.log(n))
    else:
        # the jitter floor leaves shifts of order 1e-6 / sqrt(n)
        assert abs(ci.shift_low) < 1e-5 and abs(ci.shift_high) < 1e-5
        assert ci.width == pytest.approx(2 * w, abs=1e-5)


def test_contrast_bootstrap_matches_sequential_replicates():
    rng = np.random.default_rng(4)
    for L, folds in [
        (rng.standard_normal((21, 5)), None),
        (rng.integers(0, 2, size=(20, 4)).astype(float), np.repeat(np.arange(5), 4)),
    ]:
        em = ErrorMatrix(L, folds)
        B = 30
        est, rec = bootstrap_contrast(em, B, child_generators(np.random.default_rng(5), B), K=3)
        Q = column_means(em)
        for b, g in enumerate(child_generators(np.random.default_rng(5), B)):
            c = debias_contrast(resample(em, g), K=3, rng=g)
            assert est[b] == pytest.approx(c.estimate, abs=1e-12)
            assert rec[b] == Q[c.selected_index]


def test_randomized_bootstrap_matches_sequential_replicates():
    rng = np.random.default_rng(6)
    em = ErrorMatrix(rng.standard_normal((30, 4)) + [0, 0.1, 0.2, 0.05])
    B = 20
    est, rec = bootstrap_randomized(em, B, child_generators(np.random.default_rng(7), B), H=15)
    Q = column_means(em)
    for b, g in enumerate(child_generators(np.random.default_rng(7), B)):
        r = randomized_estimate(resample(em, g), rng=g, H=15)
        assert est[b] == pytest.approx(r.estimate, abs=1e-12)
        assert rec[b] == pytest.approx(Q[r.selected_indices].mean(), abs=1e-15)


def test_randomized_bootstrap_with_constant_column():
    # replicates where a 0-1 column happens to be constant use the jitter fallback
    L = np.zeros((10, 3))
    L[0, 1] = 1.0
    L[:5, 2] = 1.0
    em = ErrorMatrix(L)
    est, _ = bootstrap_randomized(em, 50, child_generators(np.random.default_rng(0), 50), H=5)
    assert np.all(np.isfinite(est))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["contrast", "randomized"]), st.sampled_from([0.5, -2.0]))
def test_shift_equivariance(seed, which, c):
    rng = np.random.default_rng(seed)
    L = rng.integers(0, 8, size=(24, 4)) / 4.0
    a = bootstrap_ci(ErrorMatrix(L), which, 1.0, B=40, rng=np.random.default_rng(seed), H=10)
    b = bootstrap_ci(ErrorMatrix(L + c), which, 1.0 + c, B=40, rng=np.random.default_rng(seed), H=10)
    assert b.lower == pytest.approx(a.lower + c, abs=1e-10)
    assert b.upper == pytest.approx(a.upper + c, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["contrast", "randomized"]), st.integers(2, 60))
def test_interval_contains_shifted_quantiles(seed, which, B):
    rng = np.random.default_rng(seed)
    em = ErrorMatrix(rng.standard_normal((12, 3)))
    ci = bootstrap_ci(em, which, 0.1, B=B, rng=rng, H=5)
    assert ci.lower <= 0.1 + ci.shift_low and 0.1 + ci.shift_high <= ci.upper
    assert ci.shift_low <= ci.shift_high
    assert ci.width >= 2 * ci.widening > 0


def test_reproducible_and_validated():
    em = ErrorMatrix(np.random.default_rng(8).standard_normal((15, 3)))
    a = bootstrap_ci(em, "randomized", 0.0, B=30, rng=np.random.default_rng(1), H=5)
    b = bootstrap_ci(em, "randomized", 0.0, B=30, rng=np.random.default_rng(1), H=5)
    assert a == b
    with pytest.raises(ValueError, match="B=1"):
        bootstrap_ci(em, "contrast", 0.0, B=1)
    with pytest.raises(ValueError, match="level"):
        bootstrap_ci(em, "contrast", 0.0, level=1.0)
    with pytest.raises(ValueError, match="unknown estimator"):
        bootstrap_ci(em, "other", 0.0, B=5)


def test_batching_does_not_change_results(monkeypatch):
    import valdebias.bootstrap as bs

    em = ErrorMatrix(np.random.default_rng(9).standard_normal((20, 3)))
    full = bootstrap_ci(em, "randomized", 0.0, B=25, rng=np.random.default_rng(2), H=8)
    monkeypatch.setattr(bs, "_BATCH_CELLS", 100)
    small = bootstrap_ci(em, "randomized", 0.0, B=25, rng=np.random.default_rng(2), H=8)
    assert small.lower == pytest.approx(full.lower, abs=1e-14)
    assert small.upper == pytest.approx(full.upper, abs=1e-14)
