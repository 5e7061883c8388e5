"""Generative scenarios S0-S5.

S0 and S1 produce validation-error matrices directly. S2-S5 produce
classification datasets that are turned into CV error matrices by a
learner grid (see :mod:`valdebias.sim.cv`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ..core import ErrorMatrix, SeedLike, as_generator

KINDS = ("S0", "S1", "S2", "S3", "S4", "S5")
LEARNERS = ("lasso-logistic", "nsc", "cart", "knn")
SIGNAL_FEATURES = 10
AR_COEF = 0.5


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"X must be n x p and y length n, got {X.shape} and {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def take(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows])


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``m`` is the number of candidate models for S0/S1 and the lasso grid
    size for S2-S4; the NSC/KNN/CART grids used in S5 have fixed sizes.
    """

    kind: str
    n: int
    p: int = 0
    m: int = 30
    learner: Optional[str] = None
    cv_folds: int = 5
    signal: bool = True
    beta: float = 4.0
    shift: float = 0.2
    test_size: int = 10_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.kind in ("S0", "S1"):
            if self.m < 1:
                raise ValueError("m must be at least 1")
            return
        if self.p < 1:
            raise ValueError(f"{self.kind} needs p >= 1")
        if self.kind in ("S3", "S4") and self.p < SIGNAL_FEATURES:
            raise ValueError(f"{self.kind} needs p >= {SIGNAL_FEATURES} signal features, got p={self.p}")
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}; expected one of {', '.join(LEARNERS)}")
        if self.kind == "S5" and self.n % 2:
            raise ValueError("S5 needs an even n (two classes of equal size)")

    @property
    def direct(self) -> bool:
        return self.kind in ("S0", "S1")

    @property
    def no_signal(self) -> bool:
        """True when every classifier has test error exactly 0.5."""
        return self.kind == "S2" or (self.kind == "S5" and not self.signal)

    @property
    def label(self) -> str:
        if self.direct:
            return self.kind
        if self.kind == "S5":
            return f"S5({'signal' if self.signal else 'no-signal'},{self.learner})"
        return f"{self.kind}(p={self.p})"

    @property
    def stem(self) -> str:
        """Filesystem-friendly version of :attr:`label`."""
        out = self.label
        for a, b in (("(", "_"), (")", ""), ("=", ""), (",", "_")):
            out = out.replace(a, b)
        return out


def default_scenario(kind: str, **overrides) -> Scenario:
    """Standard set-up for ``kind``, with any field overridden."""
    base = {
        "S0": Scenario("S0", n=100, m=30),
        "S1": Scenario("S1", n=100, m=30),
        "S2": Scenario("S2", n=100, p=10, learner="lasso-logistic"),
        "S3": Scenario("S3", n=100, p=10, learner="lasso-logistic"),
        "S4": Scenario("S4", n=100, p=10, learner="lasso-logistic"),
        "S5": Scenario("S5", n=40, p=1000, learner="knn", signal=False),
    }
    if kind not in base:
        raise ValueError(f"unknown scenario {kind!r}; expected one of {', '.join(KINDS)}")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(base[kind], **overrides)


def gen_s0(n: int = 100, m: int = 30, rng: SeedLike = None) -> ErrorMatrix:
    """i.i.d. N(0, 1) losses; every model has true error 0."""
    return ErrorMatrix(as_generator(rng).standard_normal((n, m)))


def gen_s1(n: int = 100, m: int = 30, rng: SeedLike = None) -> tuple[ErrorMatrix, np.ndarray]:
    """True errors ``mu_j ~ N(0, 1/n)`` and losses ``N(mu_j, 1)``; returns ``(matrix, mu)``."""
    rng = as_generator(rng)
    mu = rng.standard_normal(m) / np.sqrt(n)
    return ErrorMatrix(mu + rng.standard_normal((n, m))), mu


def _ar1_features(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    E = rng.standard_normal((n, p))
    X = np.empty_like(E)
    X[:, 0] = E[:, 0]
    scale = np.sqrt(1.0 - AR_COEF**2)
    for k in range(1, p):
        X[:, k] = AR_COEF * X[:, k - 1] + scale * E[:, k]
    return X


def _logistic_labels(X: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    eta = beta * X[:, :SIGNAL_FEATURES].sum(axis=1)
    prob = 0.5 * (1.0 + np.tanh(0.5 * eta))
    return (rng.random(X.shape[0]) < prob).astype(np.int64)


def _s5_features(y: np.ndarray, p: int, signal: bool, shift: float, rng) -> np.ndarray:
    X = rng.standard_normal((y.size, p))
    if signal:
        shifted = max(1, p // 10)
        X[:, :shifted] += shift * y[:, None]
    return X


def gen_classification(
    kind: str,
    n: int,
    p: int,
    rng: SeedLike = None,
    *,
    signal: bool = True,
    beta: float = 4.0,
    shift: float = 0.2,
    balanced: bool = True,
) -> Dataset:
    """Draw a dataset from S2, S3, S4 or S5.

    For S5 with ``balanced=True`` the first ``n/2`` rows are class 0 and the
    rest class 1; ``balanced=False`` draws labels as fair coin flips, which
    is how fresh test points are generated.
    """
    rng = as_generator(rng)
    if kind in ("S3", "S4") and p < SIGNAL_FEATURES:
        raise ValueError(f"{kind} needs p >= {SIGNAL_FEATURES}, got p={p}")
    if kind == "S2":
        X = rng.standard_normal((n, p))
        y = (rng.random(n) < 0.5).astype(np.int64)
    elif kind == "S3":
        X = rng.standard_normal((n, p))
        y = _logistic_labels(X, beta, rng)
    elif kind == "S4":
        X = _ar1_features(n, p, rng)
        y = _logistic_labels(X, beta, rng)
    elif kind == "S5":
        if balanced:
            if n % 2:
                raise ValueError("balanced S5 data needs an even n")
            y = np.repeat(np.array([0, 1]), n // 2)
        else:
            y = (rng.random(n) < 0.5).astype(np.int64)
        X = _s5_features(y, p, signal, shift, rng)
    else:
        raise ValueError(f"{kind!r} is not a classification scenario")
    return Dataset(X, y)


def draw_dataset(sc: Scenario, rng: SeedLike = None) -> Dataset:
    return gen_classification(
        sc.kind, sc.n, sc.p, rng, signal=sc.signal, beta=sc.beta, shift=sc.shift
    )


def draw_test_set(sc: Scenario, size: int, rng: SeedLike = None) -> Dataset:
    """Fresh draws from the population of ``sc`` for scoring fitted models."""
    return gen_classification(
        sc.kind, size, sc.p, rng, signal=sc.signal, beta=sc.beta, shift=sc.shift, balanced=False
    )
