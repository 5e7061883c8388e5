"""Classifiers used to build CV error matrices.

Each ``*Path`` class fits one model per tuning value on a training set and
predicts labels for all of them at once: ``predict`` returns an
``(n_new, m)`` array whose column ``j`` comes from grid value ``j``.

Grid values for the lasso and NSC are fractions of a data-dependent maximum
(``lambda_max`` and the largest standardized centroid gap), so the absolute
penalty is recomputed on every training set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .scenarios import Dataset

LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class LearnerGrid:
    family: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("a learner grid needs at least two tuning values")
        d = np.diff(v)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("grid values must be strictly monotone")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.size


def default_grid(family: str, m: int = 30) -> LearnerGrid:
    if family == "lasso-logistic":
        # decreasing penalty, from lambda_max down to 0.01 lambda_max
        return LearnerGrid(family, np.logspace(0.0, -2.0, m))
    if family == "nsc":
        return LearnerGrid(family, np.linspace(0.0, 1.0, 30))
    if family == "knn":
        return LearnerGrid(family, np.arange(1, 22, 2, dtype=np.float64))
    if family == "cart":
        return LearnerGrid(family, np.arange(1, 9, dtype=np.float64))
    raise ValueError(f"unknown learner family {family!r}")


def make_learner(grid: LearnerGrid):
    cls = {
        "lasso-logistic": LassoLogisticPath,
        "nsc": NSCPath,
        "knn": KNNPath,
        "cart": CARTPath,
    }[grid.family]
    return cls(grid.values)


# --------------------------------------------------------------------------
# lasso-penalized logistic regression


@numba.njit(cache=True)
def _sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _softplus(t):
    if t > 0:
        return t + np.log1p(np.exp(-t))
    return np.log1p(np.exp(t))


@numba.njit(cache=True)
def _coordinate_step(X, y, j, lam, old, eta, mu, bound):
    """New value of coordinate ``j`` (``j < 0`` means the intercept).

    Tries a proximal Newton step; if it does not lower the objective, takes
    the step that minimizes the curvature-``bound`` majorizer instead, which
    always descends.
    """
    n = eta.shape[0]
    g = 0.0
    h = 0.0
    for i in range(n):
        x = 1.0 if j < 0 else X[i, j]
        g += x * (mu[i] - y[i])
        h += x * x * mu[i] * (1.0 - mu[i])
    g /= n
    h /= n
    pen = 0.0 if j < 0 else lam
    if h > 1e-12 * bound:
        zj = h * old - g
        if zj > pen:
            new = (zj - pen) / h
        elif zj < -pen:
            new = (zj + pen) / h
        else:
            new = 0.0
        d = new - old
        if d == 0.0:
            return new
        change = 0.0
        for i in range(n):
            x = 1.0 if j < 0 else X[i, j]
            change += _softplus(eta[i] + d * x) - _softplus(eta[i]) - y[i] * d * x
        change = change / n + pen * (abs(new) - abs(old))
        if change <= 0.0:
            return new
    zj = bound * old - g
    if zj > pen:
        return (zj - pen) / bound
    if zj < -pen:
        return (zj + pen) / bound
    return 0.0


@numba.njit(cache=True)
def _cd_sweep(X, y, lam, beta, b0, eta, mu, curv, coords):
    """One pass over the intercept and ``coords``; returns (b0, max |change|)."""
    n = X.shape[0]
    big = 0.0
    new = _coordinate_step(X, y, -1, lam, b0, eta, mu, 0.25)
    d = new - b0
    if d != 0.0:
        b0 = new
        for i in range(n):
            eta[i] += d
            mu[i] = _sigmoid(eta[i])
        big = abs(d)
    for j in coords:
        if curv[j] == 0.0:
            continue
        new = _coordinate_step(X, y, j, lam, beta[j], eta, mu, curv[j])
        d = new - beta[j]
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                eta[i] += d * X[i, j]
                mu[i] = _sigmoid(eta[i])
            if abs(d) > big:
                big = abs(d)
    return b0, big


@numba.njit(cache=True)
def _cd_lasso_logistic(X, y, lam, beta, b0, tol, max_sweeps):
    """Cyclic coordinate descent for the lasso-penalized logistic loss.

    Each coordinate takes a safeguarded Newton step (see
    :func:`_coordinate_step`), so the objective never increases. Alternates full sweeps with sweeps over the nonzero coordinates; stops
    once a full sweep changes no parameter by more than ``tol``.
    Returns (b0, sweeps used, converged).
    """
    n, p = X.shape
    curv = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        curv[j] = 0.25 * s / n
    eta = np.empty(n)
    mu = np.empty(n)
    for i in range(n):
        t = b0
        for j in range(p):
            t += X[i, j] * beta[j]
        eta[i] = t
        mu[i] = _sigmoid(t)
    everything = np.arange(p)
    sweeps = 0
    while sweeps < max_sweeps:
        b0, big = _cd_sweep(X, y, lam, beta, b0, eta, mu, curv, everything)
        sweeps += 1
        if big < tol:
            return b0, sweeps, True
        active = np.flatnonzero(beta != 0.0)
        while sweeps < max_sweeps:
            b0, big = _cd_sweep(X, y, lam, beta, b0, eta, mu, curv, active)
            sweeps += 1
            if big < tol:
                break
    return b0, sweeps, False


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which all slopes are zero."""
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / X.shape[0])


def logistic_objective(X, y, beta, b0, lam) -> float:
    eta = b0 + X @ beta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(beta).sum())


@dataclass
class LassoFit:
    beta: np.ndarray
    intercept: float
    converged: bool
    sweeps: int

    def decision_function(self, X):
        return self.intercept + np.asarray(X) @ self.beta

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


def _null_intercept(y) -> float:
    ybar = float(np.clip(np.mean(y), 1e-12, 1 - 1e-12))
    return float(np.log(ybar / (1 - ybar)))


def fit_lasso_logistic(
    train: Dataset,
    lam: float,
    *,
    beta0=None,
    intercept0=None,
    tol: float = LASSO_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
) -> LassoFit:
    """Minimize mean logistic loss + ``lam * ||beta||_1`` (intercept unpenalized)."""
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    X = np.asfortranarray(train.X)
    y = train.y.astype(np.float64)
    if lam >= lambda_max(train.X, y):
        # exact solution; iterating would only add rounding-level slopes
        return LassoFit(np.zeros(train.p), _null_intercept(y), True, 0)
    beta = np.zeros(train.p) if beta0 is None else np.array(beta0, dtype=np.float64)
    b0 = _null_intercept(y) if intercept0 is None else float(intercept0)
    b0, sweeps, ok = _cd_lasso_logistic(X, y, float(lam), beta, b0, tol, max_sweeps)
    return LassoFit(beta, float(b0), bool(ok), int(sweeps))


class LassoLogisticPath:
    """Lasso-logistic fits along ``fraction * lambda_max``, warm-started."""

    def __init__(self, fractions):
        self.fractions = np.asarray(fractions, dtype=np.float64)

    def fit(self, X, y):
        train = Dataset(X, y)
        lmax = lambda_max(train.X, train.y.astype(np.float64))
        self.lambdas_ = self.fractions * lmax
        m = self.fractions.size
        self.coef_ = np.zeros((m, train.p))
        self.intercept_ = np.zeros(m)
        self.converged_ = np.zeros(m, dtype=bool)
        fit = None
        # warm starts run from the largest penalty down
        for j in np.argsort(-self.lambdas_, kind="stable"):
            fit = fit_lasso_logistic(
                train,
                self.lambdas_[j],
                beta0=None if fit is None else fit.beta,
                intercept0=None if fit is None else fit.intercept,
            )
            self.coef_[j] = fit.beta
            self.intercept_[j] = fit.intercept
            self.converged_[j] = fit.converged
        return self

    def predict(self, X):
        eta = np.asarray(X) @ self.coef_.T + self.intercept_
        return (eta > 0).astype(np.int8)


# --------------------------------------------------------------------------
# nearest shrunken centroids


def _soft(a, t):
    return np.sign(a) * np.maximum(np.abs(a) - t, 0.0)


class NSCPath:
    """Nearest shrunken centroids over thresholds ``fraction * max |d|``.

    Class centroids are shrunk toward the overall centroid by
    soft-thresholding the standardized differences ``d``; a point goes to
    the class minimizing the standardized squared distance minus
    ``2 log(prior)``.
    """

    def __init__(self, fractions):
        self.fractions = np.asarray(fractions, dtype=np.float64)

    def _fit_statistics(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y).astype(np.int64)
        n = X.shape[0]
        counts = np.bincount(y, minlength=2).astype(np.float64)
        present = counts > 0
        overall = X.mean(axis=0)
        means = np.array([X[y == c].mean(axis=0) if present[c] else overall for c in (0, 1)])
        resid = X - means[y]
        dof = max(n - int(present.sum()), 1)
        s = np.sqrt((resid**2).sum(axis=0) / dof)
        scale = s + float(np.median(s))
        scale[scale == 0] = 1.0
        mk = np.sqrt(np.where(present, 1.0 / np.maximum(counts, 1) - 1.0 / n, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(mk[:, None] > 0, (means - overall) / (mk[:, None] * scale), 0.0)
        self.overall_ = overall
        self.scale_ = scale
        self.mk_ = mk
        self.d_ = d
        with np.errstate(divide="ignore"):
            self.log_prior_ = np.where(present, np.log(counts / n), -np.inf)

    def _shrink(self, thresholds):
        self.thresholds_ = np.asarray(thresholds, dtype=np.float64)
        shrunk = _soft(self.d_[None], self.thresholds_[:, None, None])   # (m, 2, p)
        self.centroids_ = self.overall_ + self.mk_[None, :, None] * self.scale_ * shrunk

    def fit(self, X, y):
        self._fit_statistics(X, y)
        self._shrink(self.fractions * float(np.abs(self.d_).max()))
        return self

    def scores(self, X):
        Xs = np.asarray(X, dtype=np.float64) / self.scale_
        Cs = self.centroids_ / self.scale_
        cross = np.einsum("ip,mkp->imk", Xs, Cs)
        dist = (Xs**2).sum(axis=1)[:, None, None] - 2 * cross + (Cs**2).sum(axis=2)[None]
        return dist - 2 * self.log_prior_

    def predict(self, X):
        # ties go to class 0
        return np.argmin(self.scores(X), axis=2).astype(np.int8)


# --------------------------------------------------------------------------
# k nearest neighbours


class KNNPath:
    """Euclidean majority vote; distance ties go to the lower training index
    and vote ties (even k) to class 0."""

    def __init__(self, ks):
        self.ks = np.asarray(ks).astype(np.int64)

    def fit(self, X, y):
        self.X_ = np.asarray(X, dtype=np.float64)
        self.y_ = np.asarray(y).astype(np.int64)
        if self.ks.max() > self.X_.shape[0]:
            raise ValueError(f"k={self.ks.max()} exceeds the {self.X_.shape[0]} training points")
        return self

    def predict(self, X, chunk: int = 2048):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[0], self.ks.size), dtype=np.int8)
        tr_sq = (self.X_**2).sum(axis=1)
        for lo in range(0, X.shape[0], chunk):
            Xc = X[lo : lo + chunk]
            d2 = (Xc**2).sum(axis=1)[:, None] - 2 * Xc @ self.X_.T + tr_sq[None]
            order = np.argsort(d2, axis=1, kind="stable")
            votes = np.cumsum(self.y_[order], axis=1)[:, self.ks - 1]
            out[lo : lo + chunk] = (2 * votes > self.ks).astype(np.int8)
        return out


# --------------------------------------------------------------------------
# classification trees


def _gini_best_split(X, y):
    """Best (feature, threshold, impurity) over all features, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n = X.shape[0]
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    ones = np.cumsum(y[order], axis=0)[:-1]                 # class-1 counts left of each cut
    nl = np.arange(1, n)[:, None].astype(np.float64)
    nr = n - nl
    total1 = y.sum()
    pl = ones / nl
    pr = (total1 - ones) / nr
    imp = (nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr)) / n
    valid = Xs[1:] > Xs[:-1]
    imp = np.where(valid, imp, np.inf)
    flat = imp.T.ravel()                                      # feature-major
    best = int(np.argmin(flat))
    if not np.isfinite(flat[best]):
        return None
    f, pos = divmod(best, n - 1)
    thr = 0.5 * (Xs[pos, f] + Xs[pos + 1, f])
    return f, thr, float(flat[best])


class CARTPath:
    """Greedy Gini tree grown once to the deepest grid value.

    A greedy tree limited to depth ``d`` equals the full tree truncated at
    depth ``d``, so one fit serves every grid value.
    """

    def __init__(self, depths):
        self.depths = np.asarray(depths).astype(np.int64)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y).astype(np.int64)
        self.feature_: list[int] = []
        self.threshold_: list[float] = []
        self.left_: list[int] = []
        self.right_: list[int] = []
        self.label_: list[int] = []
        self._grow(X, y, np.arange(X.shape[0]), 0, int(self.depths.max()))
        return self

    def _grow(self, X, y, rows, depth, max_depth):
        node = len(self.label_)
        ys = y[rows]
        ones = int(ys.sum())
        self.label_.append(1 if 2 * ones > ys.size else 0)
        self.feature_.append(-1)
        self.threshold_.append(0.0)
        self.left_.append(-1)
        self.right_.append(-1)
        if depth >= max_depth or ones == 0 or ones == ys.size:
            return node
        parent = 2.0 * (ones / ys.size) * (1 - ones / ys.size)
        split = _gini_best_split(X[rows], ys)
        if split is None or split[2] >= parent - 1e-12:
            return node
        f, thr, _ = split
        go_left = X[rows, f] <= thr
        self.feature_[node] = f
        self.threshold_[node] = thr
        self.left_[node] = self._grow(X, y, rows[go_left], depth + 1, max_depth)
        self.right_[node] = self._grow(X, y, rows[~go_left], depth + 1, max_depth)
        return node

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        feature = np.array(self.feature_)
        threshold = np.array(self.threshold_)
        left = np.array(self.left_)
        right = np.array(self.right_)
        label = np.array(self.label_, dtype=np.int8)
        out = np.empty((X.shape[0], self.depths.size), dtype=np.int8)
        node = np.zeros(X.shape[0], dtype=np.int64)
        depth = 0
        for col in np.argsort(self.depths, kind="stable"):
            d = self.depths[col]
            while depth < d:
                internal = feature[node] >= 0
                if not internal.any():
                    break
                idx = np.flatnonzero(internal)
                cur = node[idx]
                goes_left = X[idx, feature[cur]] <= threshold[cur]
                node[idx] = np.where(goes_left, left[cur], right[cur])
                depth += 1
            depth = max(depth, d)
            out[:, col] = label[node]
        return out


# --------------------------------------------------------------------------
# single-model conveniences


def fit_nsc(train: Dataset, delta: float):
    """NSC at an absolute shrinkage threshold ``delta``."""
    path = NSCPath(np.array([0.0]))
    path._fit_statistics(train.X, train.y)
    path._shrink([float(delta)])
    return _Column(path)


class _Column:
    def __init__(self, path):
        self._path = path

    def predict(self, X):
        return self._path.predict(X)[:, 0].astype(np.int64)


def fit_knn(train: Dataset, k: int):
    return _Column(KNNPath(np.array([k])).fit(train.X, train.y))


def fit_cart(train: Dataset, max_depth: int):
    return _Column(CARTPath(np.array([max_depth])).fit(train.X, train.y))
