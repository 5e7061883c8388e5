"""Contrast-based correction for selection by minimum validation error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ErrorMatrix,
    ErrorMatrixError,
    FoldPartition,
    SeedLike,
    SelectionResult,
    as_generator,
    column_means,
    fold_means,
    make_folds,
    select_min,
    truncate_to_folds,
)


@dataclass(frozen=True)
class ContrastEstimate:
    q_selected: float
    delta_hat: float
    estimate: float
    selected_index: int
    per_fold_selected: np.ndarray
    K: int
    partition: Optional[FoldPartition] = None


def contrast_correction(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correction from per-fold means.

    ``F`` has shape ``(..., K, m)``. For each fold ``k`` the model picked on
    that fold is scored on the remaining folds; the average gap, scaled by
    ``1 / (K sqrt K)``, is the correction. Returns ``(delta, per_fold_picks)``
    with leading batch dimensions preserved.
    """
    F = np.asarray(F, dtype=np.float64)
    K = F.shape[-2]
    if K < 2:
        raise ErrorMatrixError("the contrast needs K >= 2 folds")
    picks = np.argmin(F, axis=-1)                                    # (..., K)
    at_pick = np.take_along_axis(F, picks[..., None, :], axis=-1)    # (..., K, K): [l, k] = F[l, j*_k]
    in_fold = np.diagonal(at_pick, axis1=-2, axis2=-1)               # F[k, j*_k]
    held_out = (at_pick.sum(axis=-2) - in_fold) / (K - 1)
    delta = (held_out - in_fold).sum(axis=-1) / (K * np.sqrt(K))
    return delta, picks


def contrast_estimate(em: ErrorMatrix, fp: FoldPartition) -> ContrastEstimate:
    """Debiased error of the minimum-validation-error model for a given partition."""
    if fp.n != em.n:
        raise ErrorMatrixError(f"partition covers {fp.n} rows, matrix has {em.n}")
    Q = column_means(em)
    sel = select_min(Q)
    delta, picks = contrast_correction(fold_means(em, fp))
    q_sel = float(Q[sel.selected_index])
    delta = float(delta)
    return ContrastEstimate(
        q_selected=q_sel,
        delta_hat=delta,
        estimate=q_sel + delta,
        selected_index=sel.selected_index,
        per_fold_selected=picks,
        K=fp.K,
        partition=fp,
    )


def nominal_error(em: ErrorMatrix) -> tuple[SelectionResult, float]:
    sel = select_min(column_means(em))
    return sel, float(sel.criterion_values[sel.selected_index])


def debias_contrast(
    em: ErrorMatrix,
    K: int = 2,
    rng: SeedLike = None,
    partition: Optional[FoldPartition] = None,
) -> ContrastEstimate:
    """Entry point: choose the partition, then apply :func:`contrast_estimate`.

    CV matrices always use their own folds and ``K`` is ignored. For
    sample-splitting matrices a fresh random partition is drawn unless one
    is supplied; if ``n`` is not a multiple of ``K``, ``n mod K`` random rows
    are dropped first.
    """
    if em.is_cv:
        return contrast_estimate(em, em.cv_partition())
    if partition is not None:
        return contrast_estimate(em, partition)
    rng = as_generator(rng)
    em = truncate_to_folds(em, K, rng)
    return contrast_estimate(em, make_folds(em.n, K, rng))
