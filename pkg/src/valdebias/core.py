"""Error matrices, fold partitions and minimum-error selection.

Indices are 0-based throughout the Python API: model ``j`` is column ``j``
and fold labels run over ``0..K-1``. The CSV layer translates fold labels
to and from the 1-based labels used on disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

SeedLike = Union[None, int, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_generators(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Independent streams keyed by ``(base, index)``.

    ``base`` is drawn once from ``rng``; stream ``b`` depends only on
    ``(base, b)``, so work can be split across processes in any order.
    """
    base = int(rng.integers(0, 2**63 - 1))
    return [np.random.default_rng([base, b]) for b in range(count)]


class ErrorMatrixError(ValueError):
    """Raised when an error matrix or fold partition violates its invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FoldPartition:
    """Assignment of ``n`` rows to ``K`` folds of equal size ``n / K``."""

    assignment: np.ndarray
    K: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or not np.issubdtype(a.dtype, np.integer):
            raise ErrorMatrixError("fold assignment must be a 1-d integer vector")
        K = int(self.K)
        if K < 2:
            raise ErrorMatrixError(f"need at least 2 folds, got K={K}")
        n = a.shape[0]
        if n % K:
            raise ErrorMatrixError(f"n={n} rows cannot be split into K={K} equal folds")
        if a.min(initial=0) < 0 or a.max(initial=0) >= K:
            raise ErrorMatrixError(f"fold labels must lie in 0..{K - 1}")
        counts = np.bincount(a, minlength=K)
        if np.any(counts != n // K):
            raise ErrorMatrixError(f"fold sizes {counts.tolist()} are not all equal to {n // K}")
        object.__setattr__(self, "assignment", _readonly(a.astype(np.int64)))
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


@dataclass(frozen=True)
class ErrorMatrix:
    """Per-observation, per-model losses.

    ``losses[i, j]`` is the loss of model ``j`` on validation observation ``i``.
    When ``fold_of_row`` is given the matrix came from K-fold CV and row ``i``
    was scored by the models trained without fold ``fold_of_row[i]``.
    """

    losses: np.ndarray
    fold_of_row: Optional[np.ndarray] = None
    names: Optional[tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        L = np.asarray(self.losses, dtype=np.float64)
        if L.ndim != 2:
            raise ErrorMatrixError(f"losses must be 2-d, got shape {L.shape}")
        n, m = L.shape
        if n < 2 or m < 1:
            raise ErrorMatrixError(f"need n >= 2 rows and m >= 1 columns, got {n}x{m}")
        bad = ~np.isfinite(L)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ErrorMatrixError(f"non-finite loss {L[i, j]} at row {i}, column {j}")
        object.__setattr__(self, "losses", _readonly(L))
        if self.fold_of_row is not None:
            fp = FoldPartition(np.asarray(self.fold_of_row), int(np.max(self.fold_of_row)) + 1)
            if fp.n != n:
                raise ErrorMatrixError("fold_of_row length does not match the number of rows")
            object.__setattr__(self, "fold_of_row", fp.assignment)
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != m:
                raise ErrorMatrixError(f"{len(names)} column names for {m} columns")
            object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.losses.shape[0]

    @property
    def m(self) -> int:
        return self.losses.shape[1]

    @property
    def is_cv(self) -> bool:
        return self.fold_of_row is not None

    def cv_partition(self) -> Optional[FoldPartition]:
        if self.fold_of_row is None:
            return None
        return FoldPartition(self.fold_of_row, int(self.fold_of_row.max()) + 1)

    def shifted(self, c: float) -> "ErrorMatrix":
        return ErrorMatrix(self.losses + c, self.fold_of_row, self.names)

    def take_rows(self, rows: np.ndarray) -> "ErrorMatrix":
        folds = None if self.fold_of_row is None else self.fold_of_row[rows]
        return ErrorMatrix(self.losses[rows], folds, self.names)


@dataclass(frozen=True)
class SelectionResult:
    selected_index: int
    criterion_values: np.ndarray


def column_means(em: ErrorMatrix) -> np.ndarray:
    """Validation error ``Q_j`` of every model (mean of each column)."""
    return em.losses.mean(axis=0)


def make_folds(n: int, K: int, rng: SeedLike = None) -> FoldPartition:
    """Uniformly random partition of ``n`` rows into ``K`` equal folds."""
    if K < 2:
        raise ErrorMatrixError(f"need at least 2 folds, got K={K}")
    if n % K:
        raise ErrorMatrixError(
            f"n={n} is not divisible by K={K}; drop n mod K rows first (see truncate_to_folds)"
        )
    rng = as_generator(rng)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.repeat(np.arange(K), n // K)
    return FoldPartition(assignment, K)


def truncate_to_folds(em: ErrorMatrix, K: int, rng: SeedLike = None) -> ErrorMatrix:
    """Drop ``n mod K`` rows chosen at random so that ``K`` equal folds exist."""
    rng = as_generator(rng)
    extra = em.n % K
    if extra == 0:
        return em
    keep = np.sort(rng.permutation(em.n)[: em.n - extra])
    return em.take_rows(keep)


def fold_means(em: ErrorMatrix, fp: FoldPartition) -> np.ndarray:
    """``K x m`` matrix of per-fold column means."""
    if fp.n != em.n:
        raise ErrorMatrixError(f"partition covers {fp.n} rows, matrix has {em.n}")
    out = np.empty((fp.K, em.m))
    for k in range(fp.K):
        out[k] = em.losses[fp.assignment == k].mean(axis=0)
    return out


def select_min(values) -> SelectionResult:
    """Index of the smallest value; ties go to the lowest index."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("select_min needs a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("select_min needs finite values")
    # np.argmin returns the first occurrence of the minimum
    return SelectionResult(int(np.argmin(v)), v)
