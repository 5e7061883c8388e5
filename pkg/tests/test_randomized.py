import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valdebias.core import ErrorMatrix, column_means
from valdebias.randomized import (
    NoiseConfig,
    NotPositiveSemidefinite,
    default_sigma0,
    draw_noise_pair,
    pseudo_errors,
    randomized_estimate,
    sample_covariance,
)


def test_sample_covariance_examples():
    np.testing.assert_array_equal(sample_covariance(ErrorMatrix([[0, 0], [2, 2]])), [[1, 1], [1, 1]])
    const = ErrorMatrix(np.tile([0.3, 7.1, -2.0], (5, 1)))
    np.testing.assert_array_equal(sample_covariance(const), np.zeros((3, 3)))
    col = np.array([0, 1, 1, 0, 1, 1, 1, 0], dtype=float)
    p = col.mean()
    assert sample_covariance(ErrorMatrix(col[:, None]))[0, 0] == pytest.approx(p * (1 - p), rel=1e-14)


def test_sample_covariance_divisor_n():
    L = np.random.default_rng(0).standard_normal((13, 4))
    np.testing.assert_allclose(sample_covariance(ErrorMatrix(L)), np.cov(L, rowvar=False, bias=True), rtol=1e-12)


def test_default_sigma0_examples():
    assert default_sigma0(np.diag([0.25, 0.16, 0.09])) == 0.09
    assert default_sigma0(np.eye(3) * 0.4) == 0.4
    assert default_sigma0(np.diag([0.0, 0.2])) == pytest.approx(2e-7, rel=1e-12)
    assert default_sigma0(np.zeros((2, 2))) == 1e-12
    assert default_sigma0(np.diag([0.0, 1e-9])) == 1e-12


def test_noise_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        NoiseConfig(np.eye(2), 0.1, alpha=0.0)
    with pytest.raises(ValueError, match="H"):
        NoiseConfig(np.eye(2), 0.1, H=0)
    with pytest.raises(ValueError, match="symmetric"):
        NoiseConfig(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.1)
    with pytest.raises(NotPositiveSemidefinite, match="eigenvalue"):
        NoiseConfig(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.1)


def test_zero_noise_degenerate():
    cfg = NoiseConfig(np.zeros((3, 3)), 0.0)
    eps, z = draw_noise_pair(cfg, 10, np.random.default_rng(0))
    assert np.all(eps == 0) and np.all(z == 0)


def test_projection_flag_within_tolerance():
    S = np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-12 * np.eye(2)
    em = ErrorMatrix(np.zeros((4, 2)) + [0.5, 0.25])
    r = randomized_estimate(em, NoiseConfig(S, 0.0, H=5), np.random.default_rng(0))
    assert r.projected


def test_z_variance_scalar():
    cfg = NoiseConfig(np.array([[1.0]]), 0.0)
    _, z = draw_noise_pair(cfg, 100, np.random.default_rng(1), size=100_000)
    assert abs(z.var() - 1.0) < 0.02


def test_noise_covariance_monte_carlo():
    S = np.array([[1.0, 0.6, -0.2], [0.6, 2.0, 0.3], [-0.2, 0.3, 0.5]])
    s0 = 0.5
    cfg = NoiseConfig(S, s0)
    N = 100_000
    eps, z = draw_noise_pair(cfg, 100, np.random.default_rng(2), size=N)
    target = S + s0 * np.eye(3)
    emp = np.cov(z, rowvar=False)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / N)
    assert np.all(np.abs(emp - target) < 5 * se)
    emp_eps = np.cov(eps, rowvar=False)
    se_eps = np.sqrt((s0**2 + np.where(np.eye(3) > 0, s0**2, 0.0)) / N)
    assert np.all(np.abs(emp_eps - s0 * np.eye(3)) < 5 * se_eps)


def test_draw_deterministic():
    cfg = NoiseConfig(np.eye(2), 0.2)
    a = draw_noise_pair(cfg, 10, np.random.default_rng(3))
    b = draw_noise_pair(cfg, 10, np.random.default_rng(3))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_pseudo_errors_examples():
    cfg = NoiseConfig(np.eye(3), 1.0, alpha=0.1)
    Q = np.array([0.1, 0.2, 0.3])
    qa, qi = pseudo_errors(Q, np.zeros(3), np.zeros(3), cfg, 100)
    np.testing.assert_array_equal(qa, Q)
    np.testing.assert_array_equal(qi, Q)
    qa, qi = pseudo_errors(np.zeros(3), np.zeros(3), np.ones(3), cfg, 100)
    np.testing.assert_allclose(qa, np.sqrt(0.001), rtol=1e-14)
    np.testing.assert_allclose(qi, -np.sqrt(0.1), rtol=1e-14)
    assert qa[0] == pytest.approx(0.031623, abs=1e-6)
    assert qi[0] == pytest.approx(-0.31623, abs=1e-5)


@given(st.integers(0, 2**32 - 1), st.integers(1, 50))
def test_pseudo_errors_reflection_at_alpha_one(seed, n):
    rng = np.random.default_rng(seed)
    Q, eps, z = rng.standard_normal((3, 4))
    qa, qi = pseudo_errors(Q, eps, z, NoiseConfig(np.eye(4), 1.0, alpha=1.0), n)
    base = Q + eps / np.sqrt(n)
    np.testing.assert_allclose(qa - base, -(qi - base), rtol=1e-12, atol=1e-14)


def test_constant_columns_example():
    em = ErrorMatrix(np.tile([3.0, 1.0], (50, 1)))
    r = randomized_estimate(em, rng=np.random.default_rng(0))
    assert r.sigma0_sq == 1e-12
    assert np.all(r.selected_indices == 1)
    assert r.estimate == pytest.approx(1.0, abs=1e-5)
    assert r.mean_nominal == 1.0


def test_matches_explicit_pseudo_error_pipeline():
    rng = np.random.default_rng(4)
    em = ErrorMatrix(rng.standard_normal((40, 6)))
    cfg = NoiseConfig.from_matrix(em, H=25)
    r = randomized_estimate(em, cfg, np.random.default_rng(8))
    eps, z = draw_noise_pair(cfg, em.n, np.random.default_rng(8), size=cfg.H)
    qa, qi = pseudo_errors(column_means(em), eps, z, cfg, em.n)
    picks = qa.argmin(axis=1)
    np.testing.assert_array_equal(r.selected_indices, picks)
    assert r.estimate == pytest.approx(qi[np.arange(cfg.H), picks].mean(), rel=1e-13)
    assert r.selection_frequencies.sum() == pytest.approx(1.0)
    for h, j in enumerate(picks):
        assert qa[h, j] <= qa[h].min()


def test_single_model_tail_bound():
    rng = np.random.default_rng(5)
    alpha, H, n = 0.1, 100, 60
    for _ in range(200):
        em = ErrorMatrix(rng.standard_normal((n, 1)))
        r = randomized_estimate(em, rng=rng, alpha=alpha, H=H)
        assert np.all(r.selected_indices == 0)
        s0 = np.sqrt(r.sigma0_sq)
        bound = 5 * s0 * (1 + 1 / np.sqrt(alpha)) / np.sqrt(n * H)
        assert abs(r.estimate - em.losses.mean()) <= bound


def test_single_model_unbiased():
    rng = np.random.default_rng(6)
    em = ErrorMatrix(rng.standard_normal((30, 1)))
    Q1 = em.losses.mean()
    est = np.array([randomized_estimate(em, rng=rng, H=10).estimate for _ in range(4000)])
    assert abs(est.mean() - Q1) < 4 * est.std(ddof=1) / np.sqrt(est.size)


def test_independence_construction():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((4, 4))
    Sigma = A @ A.T / 4 + 0.1 * np.eye(4)
    n, N = 100, 100_000
    cfg = NoiseConfig(Sigma, default_sigma0(Sigma))
    Q = rng.standard_normal((N, 4)) @ np.linalg.cholesky(Sigma / n).T
    eps, z = draw_noise_pair(cfg, n, rng, size=N)
    qa, qi = pseudo_errors(Q, eps, z, cfg, n)
    da, di = qa - qa.mean(0), qi - qi.mean(0)
    prod = da[:, :, None] * di[:, None, :]
    cross = prod.mean(0)
    se = prod.std(0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(cross) < 5 * se)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.25, -1.5, 4.0]))
def test_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    L = rng.integers(0, 8, size=(16, 5)) / 4.0
    a = randomized_estimate(ErrorMatrix(L), rng=np.random.default_rng(seed), H=20)
    b = randomized_estimate(ErrorMatrix(L + c), rng=np.random.default_rng(seed), H=20)
    np.testing.assert_array_equal(a.selection_frequencies, b.selection_frequencies)
    assert b.estimate == pytest.approx(a.estimate + c, abs=1e-12)


def test_selection_concentrates_on_best_model():
    rng = np.random.default_rng(8)
    rates = []
    for n in (25, 400):
        mu = np.zeros(10)
        mu[3] = -10 / np.sqrt(n)
        freq = np.mean(
            [
                randomized_estimate(ErrorMatrix(mu + rng.standard_normal((n, 10))), rng=rng).selection_frequencies[3]
                for _ in range(100)
            ]
        )
        rates.append(freq)
    assert rates[1] > 0.99
    assert rates[1] >= rates[0] - 0.01


def test_config_mismatch():
    em = ErrorMatrix(np.random.default_rng(0).standard_normal((5, 2)))
    with pytest.raises(ValueError, match="m=3"):
        randomized_estimate(em, NoiseConfig(np.eye(3), 0.1))
