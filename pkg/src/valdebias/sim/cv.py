"""K-fold CV error matrices and Monte Carlo test errors of the fitted models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ErrorMatrix, FoldPartition, SeedLike, as_generator, make_folds
from .learners import LearnerGrid, make_learner
from .scenarios import Dataset, Scenario, draw_test_set

TEST_CHUNK = 2000


@dataclass
class CVRun:
    error_matrix: ErrorMatrix
    folds: FoldPartition
    models: list
    """One fitted path learner per fold; ``models[k]`` never saw fold ``k``."""


def run_cv(ds: Dataset, grid: LearnerGrid, K: int = 5, rng: SeedLike = None) -> CVRun:
    """0-1 loss of every grid model on the fold it was not trained on.

    Trains exactly ``K * m`` models. Row ``i`` of the result holds the losses
    of the models fitted without ``i``'s fold.
    """
    rng = as_generator(rng)
    folds = make_folds(ds.n, K, rng)
    losses = np.empty((ds.n, grid.m))
    models = []
    for k in range(K):
        held = folds.assignment == k
        model = make_learner(grid).fit(ds.X[~held], ds.y[~held])
        pred = model.predict(ds.X[held])
        losses[held] = (pred != ds.y[held, None]).astype(np.float64)
        models.append(model)
    return CVRun(ErrorMatrix(losses, folds.assignment), folds, models)


def fold_averaged_error(models, test: Dataset) -> np.ndarray:
    """Mean over folds of each grid model's 0-1 error on ``test``."""
    err = None
    for model in models:
        e = (model.predict(test.X) != test.y[:, None]).mean(axis=0)
        err = e if err is None else err + e
    return err / len(models)


def true_err(sc: Scenario, models, rng: SeedLike = None, size: int | None = None) -> np.ndarray:
    """Test error of every grid model, averaged over the per-fold fits.

    Estimated on ``size`` fresh draws from the scenario (default
    ``sc.test_size``), generated in chunks to bound memory.
    """
    rng = as_generator(rng)
    size = sc.test_size if size is None else size
    total = None
    done = 0
    while done < size:
        step = min(TEST_CHUNK, size - done)
        e = fold_averaged_error(models, draw_test_set(sc, step, rng)) * step
        total = e if total is None else total + e
        done += step
    return total / size
