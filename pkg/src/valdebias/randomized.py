"""Selection by randomized validation error and its test-error estimate.

Each draw perturbs the validation errors twice with the same noise pair:
the selection copy ``Q + eps/sqrt(n) + sqrt(alpha/n) z`` picks a model and the
companion ``Q + eps/sqrt(n) - z/sqrt(n alpha)`` scores it. With ``z`` drawn from
``N(0, Sigma + sigma0^2 I)`` the two copies are uncorrelated when the
covariance estimate is exact, so the companion is an honest error estimate
for the model the selection copy picked.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ErrorMatrix, SeedLike, as_generator, column_means

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
SIGMA0_FLOOR = 1e-12
SIGMA0_FALLBACK_SCALE = 1e-6


class NotPositiveSemidefinite(np.linalg.LinAlgError):
    pass


def _check_psd(S: np.ndarray) -> float:
    """Smallest eigenvalue of ``S``; raises if it is below ``-PSD_TOL * trace``."""
    lam = float(np.linalg.eigvalsh(S)[0])
    tol = PSD_TOL * max(float(np.trace(S)), 0.0)
    if lam < -tol:
        raise NotPositiveSemidefinite(
            f"covariance estimate is not positive semidefinite: smallest eigenvalue {lam:.3e}"
        )
    return lam


@dataclass(frozen=True)
class NoiseConfig:
    sigma_hat: np.ndarray
    sigma0_sq: float
    alpha: float = 0.1
    H: int = 100

    def __post_init__(self):
        S = np.asarray(self.sigma_hat, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"sigma_hat must be square, got shape {S.shape}")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max(initial=0))):
            raise ValueError("sigma_hat must be symmetric")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.H) < 1:
            raise ValueError(f"need at least one noise draw, got H={self.H}")
        if not self.sigma0_sq >= 0:
            raise ValueError(f"sigma0_sq must be nonnegative, got {self.sigma0_sq}")
        _check_psd(S)
        S = 0.5 * (S + S.T)
        S.setflags(write=False)
        object.__setattr__(self, "sigma_hat", S)
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "sigma0_sq", float(self.sigma0_sq))

    @property
    def m(self) -> int:
        return self.sigma_hat.shape[0]

    @classmethod
    def from_matrix(
        cls, em: ErrorMatrix, alpha: float = 0.1, H: int = 100, sigma0_sq: Optional[float] = None
    ) -> "NoiseConfig":
        S = sample_covariance(em)
        if sigma0_sq is None:
            sigma0_sq = default_sigma0(S)
        return cls(S, sigma0_sq, alpha, H)


@dataclass(frozen=True)
class RandomizedEstimate:
    estimate: float
    selected_indices: np.ndarray
    selection_frequencies: np.ndarray
    mean_nominal: float
    sigma0_sq: float
    projected: bool = False


def sample_covariance(em: ErrorMatrix) -> np.ndarray:
    """Covariance of the loss columns with divisor ``n``."""
    return _batch_covariance(em.losses[None])[0]


def _batch_covariance(L: np.ndarray) -> np.ndarray:
    D = L - L.mean(axis=1, keepdims=True)
    # constant columns must give exactly zero variance, not rounding residue
    const = np.all(L == L[:, :1, :], axis=1)
    D = np.where(const[:, None, :], 0.0, D)
    return np.matmul(np.swapaxes(D, 1, 2), D) / L.shape[1]


def default_sigma0(sigma_hat: np.ndarray) -> float:
    """Smallest diagonal entry of the covariance estimate.

    A zero minimum (e.g. a model whose loss never varies) falls back to
    ``1e-6`` times the smallest positive diagonal entry, floored at ``1e-12``.
    """
    d = np.diag(np.asarray(sigma_hat, dtype=np.float64))
    low = float(d.min())
    if low > 0:
        return low
    pos = d[d > 0]
    if pos.size == 0:
        return SIGMA0_FLOOR
    return max(float(pos.min()) * SIGMA0_FALLBACK_SCALE, SIGMA0_FLOOR)


def _noise_factor(S: np.ndarray, sigma0_sq: float) -> tuple[np.ndarray, bool]:
    """Lower factor ``C`` with ``C C^T = S + sigma0^2 I``; flag if eigenvalues were clipped."""
    m = S.shape[0]
    try:
        return np.linalg.cholesky(S + sigma0_sq * np.eye(m)), False
    except np.linalg.LinAlgError:
        pass
    lam, V = np.linalg.eigh(S)
    tol = PSD_TOL * max(float(np.trace(S)), 0.0)
    if lam[0] < -tol:
        raise NotPositiveSemidefinite(
            f"cannot factor covariance estimate: smallest eigenvalue {lam[0]:.3e}"
        )
    clipped = np.clip(lam, 0.0, None) + sigma0_sq
    log.debug("projected covariance estimate onto the PSD cone (min eigenvalue %.3e)", lam[0])
    return V * np.sqrt(clipped), True


def draw_noise_pair(cfg: NoiseConfig, n: int, rng: SeedLike = None, size: Optional[int] = None):
    """Draw ``eps ~ N(0, sigma0^2 I)`` and ``z ~ N(0, Sigma_hat + sigma0^2 I)``.

    Returns two length-``m`` vectors, or ``(size, m)`` arrays when ``size``
    is given. ``n`` is accepted for symmetry with :func:`pseudo_errors`; the
    draws themselves do not depend on it.
    """
    rng = as_generator(rng)
    C, _ = _noise_factor(cfg.sigma_hat, cfg.sigma0_sq)
    shape = (1 if size is None else size, cfg.m)
    eps = np.sqrt(cfg.sigma0_sq) * rng.standard_normal(shape)
    z = rng.standard_normal(shape) @ C.T
    if size is None:
        return eps[0], z[0]
    return eps, z


def pseudo_errors(Q, eps, z, cfg: NoiseConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Selection copy and scoring copy of the perturbed validation errors."""
    Q = np.asarray(Q, dtype=np.float64)
    shared = Q + np.asarray(eps) / np.sqrt(n)
    q_alpha = shared + np.sqrt(cfg.alpha / n) * np.asarray(z)
    q_inv_alpha = shared - np.sqrt(1.0 / (n * cfg.alpha)) * np.asarray(z)
    return q_alpha, q_inv_alpha


def _select_and_score(Q, eps, z, cfg: NoiseConfig, n: int):
    q_alpha, q_inv = pseudo_errors(Q, eps, z, cfg, n)
    picks = np.argmin(q_alpha, axis=-1)
    scored = np.take_along_axis(q_inv, picks[..., None], axis=-1)[..., 0]
    return picks, scored


def randomized_estimate(
    em: ErrorMatrix,
    cfg: Optional[NoiseConfig] = None,
    rng: SeedLike = None,
    *,
    alpha: float = 0.1,
    H: int = 100,
    sigma0_sq: Optional[float] = None,
) -> RandomizedEstimate:
    """Test error of the randomized selection rule, averaged over ``H`` draws.

    When ``cfg`` is omitted it is built from ``em`` (sample covariance and
    the default jitter) using the keyword arguments.
    """
    if cfg is None:
        cfg = NoiseConfig.from_matrix(em, alpha=alpha, H=H, sigma0_sq=sigma0_sq)
    if cfg.m != em.m:
        raise ValueError(f"noise config is for m={cfg.m} models, matrix has m={em.m}")
    rng = as_generator(rng)
    C, projected = _noise_factor(cfg.sigma_hat, cfg.sigma0_sq)
    eps = np.sqrt(cfg.sigma0_sq) * rng.standard_normal((cfg.H, cfg.m))
    z = rng.standard_normal((cfg.H, cfg.m)) @ C.T
    Q = column_means(em)
    picks, scored = _select_and_score(Q, eps, z, cfg, em.n)
    return RandomizedEstimate(
        estimate=float(scored.mean()),
        selected_indices=picks,
        selection_frequencies=np.bincount(picks, minlength=em.m) / cfg.H,
        mean_nominal=float(Q[picks].mean()),
        sigma0_sq=cfg.sigma0_sq,
        projected=projected,
    )
