"""Bootstrap confidence intervals for the two debiased estimates.

Replicate ``b`` resamples the validation rows (within folds for CV matrices),
reruns the estimator, and records the full-data validation error at the
model(s) the replicate picked. The spread of the replicate estimates around
the mean of those recorded errors gives the interval; both ends are pushed
out by ``1 / (sqrt(n) log n)``.

All randomness for replicate ``b`` comes from its own stream (see
:func:`valdebias.core.child_generators`); the linear algebra is batched
across replicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .contrast import contrast_correction
from .core import ErrorMatrix, SeedLike, as_generator, child_generators, column_means
from .randomized import (
    PSD_TOL,
    SIGMA0_FALLBACK_SCALE,
    SIGMA0_FLOOR,
    NotPositiveSemidefinite,
    _batch_covariance,
    _noise_factor,
)

Method = Literal["contrast", "randomized"]

# float cells of replicate arrays held in memory per batch
_BATCH_CELLS = 4_000_000


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    widening: float
    B: int
    shift_low: float
    shift_high: float
    center: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def widening_term(n: int) -> float:
    """``1 / (sqrt(n) * ln(n))``."""
    return 1.0 / (math.sqrt(n) * math.log(n))


def order_statistic_index(q: float, B: int) -> int:
    """0-based position of the ``ceil(q B)``-th order statistic."""
    return max(math.ceil(round(q * B, 9)), 1) - 1


def _resample_rows(em: ErrorMatrix, rng: np.random.Generator) -> np.ndarray:
    if em.fold_of_row is None:
        return rng.integers(0, em.n, size=em.n)
    idx = np.empty(em.n, dtype=np.int64)
    for k in range(int(em.fold_of_row.max()) + 1):
        rows = np.flatnonzero(em.fold_of_row == k)
        idx[rows] = rows[rng.integers(0, rows.size, size=rows.size)]
    return idx


def resample(em: ErrorMatrix, rng: SeedLike = None) -> ErrorMatrix:
    """Bootstrap copy of ``em``: rows with replacement, within folds for CV."""
    return em.take_rows(_resample_rows(em, as_generator(rng)))


def _contrast_rows(em: ErrorMatrix, K: int, rng: np.random.Generator) -> np.ndarray:
    """Replicate rows ordered fold by fold, so they reshape to ``(K, n/K)``.

    Mirrors ``debias_contrast(resample(em, rng), K, rng)`` draw for draw.
    """
    idx = _resample_rows(em, rng)
    if em.fold_of_row is not None:
        return idx[np.argsort(em.fold_of_row, kind="stable")]
    n = em.n
    extra = n % K
    if extra:
        keep = np.sort(rng.permutation(n)[: n - extra])
        idx = idx[keep]
        n -= extra
    return idx[rng.permutation(n)]


def _quantile_interval(estimate, replicate_estimates, recorded, level, n) -> ConfidenceInterval:
    B = replicate_estimates.size
    center = float(np.mean(recorded))
    dev = np.sort(replicate_estimates - center)
    q = (1.0 - level) / 2.0
    a = float(dev[order_statistic_index(q, B)])
    b = float(dev[order_statistic_index(1.0 - q, B)])
    w = widening_term(n)
    return ConfidenceInterval(
        lower=estimate + a - w,
        upper=estimate + b + w,
        level=level,
        widening=w,
        B=B,
        shift_low=a,
        shift_high=b,
        center=center,
    )


def _batches(B: int, cells_per_rep: int):
    step = max(1, _BATCH_CELLS // max(cells_per_rep, 1))
    for start in range(0, B, step):
        yield start, min(B, start + step)


def bootstrap_contrast(em: ErrorMatrix, B: int, rngs, K: int = 2):
    """Replicate estimates and recorded full-data errors for the contrast estimator."""
    Q_full = column_means(em)
    K = int(em.fold_of_row.max()) + 1 if em.is_cv else K
    est = np.empty(B)
    rec = np.empty(B)
    for lo, hi in _batches(B, em.n * em.m):
        rows = np.stack([_contrast_rows(em, K, rngs[b]) for b in range(lo, hi)])
        Lb = em.losses[rows]                                   # (b, n', m)
        nb = Lb.shape[1]
        Qb = Lb.mean(axis=1)
        F = Lb.reshape(hi - lo, K, nb // K, em.m).mean(axis=2)
        delta, _ = contrast_correction(F)
        picks = np.argmin(Qb, axis=1)
        est[lo:hi] = Qb[np.arange(hi - lo), picks] + delta
        rec[lo:hi] = Q_full[picks]
    return est, rec


def _batch_sigma0(S: np.ndarray) -> np.ndarray:
    d = np.diagonal(S, axis1=1, axis2=2)
    low = d.min(axis=1)
    pos = np.where(d > 0, d, np.inf).min(axis=1)
    fallback = np.where(np.isfinite(pos), np.maximum(pos * SIGMA0_FALLBACK_SCALE, SIGMA0_FLOOR), SIGMA0_FLOOR)
    return np.where(low > 0, low, fallback)


def _batch_factor(S: np.ndarray, s0: np.ndarray) -> np.ndarray:
    m = S.shape[-1]
    A = S + s0[:, None, None] * np.eye(m)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.stack([_noise_factor(S[i], float(s0[i]))[0] for i in range(S.shape[0])])


def bootstrap_randomized(
    em: ErrorMatrix,
    B: int,
    rngs,
    alpha: float = 0.1,
    H: int = 100,
    sigma0_sq: Optional[float] = None,
):
    """Replicate estimates and recorded full-data errors for the randomized estimator.

    Each replicate recomputes the covariance estimate (and the default
    jitter unless ``sigma0_sq`` is fixed) and draws fresh noise; the
    recorded value is the full-data error averaged over its ``H`` picks.
    """
    Q_full = column_means(em)
    n, m = em.n, em.m
    est = np.empty(B)
    rec = np.empty(B)
    for lo, hi in _batches(B, n * m + 2 * H * m):
        nb = hi - lo
        rows = np.empty((nb, n), dtype=np.int64)
        g_eps = np.empty((nb, H, m))
        g_z = np.empty((nb, H, m))
        for i, b in enumerate(range(lo, hi)):
            rows[i] = _resample_rows(em, rngs[b])
            rngs[b].standard_normal(out=g_eps[i])
            rngs[b].standard_normal(out=g_z[i])
        Lb = em.losses[rows]
        Qb = Lb.mean(axis=1)
        S = _batch_covariance(Lb)
        lam_min = np.linalg.eigvalsh(S)[:, 0]
        tol = PSD_TOL * np.clip(np.trace(S, axis1=1, axis2=2), 0.0, None)
        if np.any(lam_min < -tol):
            i = int(np.argmin(lam_min + tol))
            raise NotPositiveSemidefinite(
                f"replicate {lo + i}: smallest covariance eigenvalue {lam_min[i]:.3e}"
            )
        s0 = _batch_sigma0(S) if sigma0_sq is None else np.full(nb, float(sigma0_sq))
        C = _batch_factor(S, s0)
        eps = np.sqrt(s0)[:, None, None] * g_eps
        z = g_z @ np.swapaxes(C, 1, 2)
        shared = Qb[:, None, :] + eps / np.sqrt(n)
        q_alpha = shared + np.sqrt(alpha / n) * z
        q_inv = shared - np.sqrt(1.0 / (n * alpha)) * z
        picks = np.argmin(q_alpha, axis=2)                      # (nb, H)
        scored = np.take_along_axis(q_inv, picks[..., None], axis=2)[..., 0]
        est[lo:hi] = scored.mean(axis=1)
        rec[lo:hi] = Q_full[picks].mean(axis=1)
    return est, rec


def bootstrap_ci(
    em: ErrorMatrix,
    which: Method,
    estimate: float,
    B: int = 1000,
    level: float = 0.90,
    rng: SeedLike = None,
    *,
    K: int = 2,
    alpha: float = 0.1,
    H: int = 100,
    sigma0_sq: Optional[float] = None,
) -> ConfidenceInterval:
    """Bootstrap interval around ``estimate``, the full-data debiased error.

    ``which`` selects the estimator rerun on each replicate. ``K`` applies to
    the contrast on sample-splitting matrices; ``alpha``, ``H`` and
    ``sigma0_sq`` to the randomized estimator.
    """
    if B < 2:
        raise ValueError(f"need at least 2 bootstrap replicates, got B={B}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    rngs = child_generators(as_generator(rng), B)
    if which == "contrast":
        est, rec = bootstrap_contrast(em, B, rngs, K=K)
    elif which == "randomized":
        est, rec = bootstrap_randomized(em, B, rngs, alpha=alpha, H=H, sigma0_sq=sigma0_sq)
    else:
        raise ValueError(f"unknown estimator {which!r}; expected 'contrast' or 'randomized'")
    return _quantile_interval(float(estimate), est, rec, level, em.n)
