"""Gaussian Fréchet distance on raw sample coordinates, plus a mode-coverage check."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TargetSpec
from .errors import ConfigError, ScoringError

REGULARIZATION = 1e-6
EIG_FLOOR = 1e-10
NEG_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    n: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise ConfigError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class FrechetScore:
    value: float
    n_real: int = 0
    n_fake: int = 0


def summarize(samples: np.ndarray) -> GaussianSummary:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ConfigError("need at least two samples for a covariance")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianSummary(mean, (cov + cov.T) / 2.0, n)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _regularized(cov: np.ndarray) -> np.ndarray:
    if np.linalg.eigvalsh(cov)[0] < EIG_FLOOR:
        return cov + REGULARIZATION * np.eye(cov.shape[0])
    return cov


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> FrechetScore:
    """||mu_a - mu_b||^2 + Tr(Sa) + Tr(Sb) - 2 Tr((Sa Sb)^1/2).

    The cross term uses the symmetric product sqrt(Sa) Sb sqrt(Sa), whose
    eigenvalues equal those of Sa Sb but are guaranteed real.
    """
    if a.dim != b.dim:
        raise ConfigError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sa = _regularized(a.covariance)
    sb = _regularized(b.covariance)
    root_a = _psd_sqrt(sa)
    m = root_a @ sb @ root_a
    lam = np.linalg.eigvalsh((m + m.T) / 2.0)
    lam = np.clip(lam, 0.0, None)  # rounding can leave tiny negatives
    diff = a.mean - b.mean
    total = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * np.sum(np.sqrt(lam)))
    if total < 0.0:
        if total < -NEG_TOLERANCE:
            raise ScoringError(
                f"negative Fréchet distance {total}: mean_a={a.mean}, cov_a={a.covariance}, "
                f"mean_b={b.mean}, cov_b={b.covariance}")
        total = 0.0
    return FrechetScore(total, a.n, b.n)


def frechet_samples(real: np.ndarray, fake: np.ndarray) -> float:
    return frechet_distance(summarize(real), summarize(fake)).value


def mode_coverage(samples: np.ndarray, target: TargetSpec, threshold: float = 3.0) -> tuple[int, float]:
    """(modes hit, fraction of high-quality samples).

    A sample is high quality when it lies within ``threshold * mode_std`` of its
    nearest center; a mode counts as hit once it collects at least
    ``max(1, n / (10 * modes))`` such samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    centers = target.centers()
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    nearest = d2.argmin(axis=1)
    good = np.sqrt(d2[np.arange(len(x)), nearest]) <= threshold * target.mode_std
    counts = np.bincount(nearest[good], minlength=target.modes)
    needed = max(1.0, len(x) / (10.0 * target.modes))
    return int(np.sum(counts >= needed)), float(good.mean()) if len(x) else 0.0
