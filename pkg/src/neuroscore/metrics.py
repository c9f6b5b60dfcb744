"""Conventional GAN metrics: Inception Score analog, kernel MMD, FID."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .numkit import InputError, trace_sqrt_product

ROW_SUM_TOL = 1e-9


def validate_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
        raise InputError(f"probability matrix must be a nonempty n x k array, got {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InputError("probabilities must be finite and nonnegative")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise InputError("probability rows must sum to 1")
    return p


def inception_score(p) -> float:
    """exp of the mean KL divergence between p(y|x) rows and the marginal p(y).

    Terms with p(y|x) = 0 contribute nothing (0 log 0 = 0).
    """
    p = validate_probs(p)
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    kl = terms.sum(axis=1)
    return float(np.exp(kl.mean()))


@dataclass(frozen=True)
class FeatureSet:
    features: Optional[np.ndarray]
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_features(cls, features) -> "FeatureSet":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        mu, sigma = moments(x)
        return cls(x, mu, sigma)

    @classmethod
    def from_moments(cls, mu, sigma) -> "FeatureSet":
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        return cls(None, mu, sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def moments(features) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (1/(n-1)) covariance of the rows."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("moments need at least 2 samples")
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (x.shape[0] - 1)
    return mu, 0.5 * (sigma + sigma.T)


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    sigma1, sigma2 = np.atleast_2d(sigma1), np.atleast_2d(sigma2)
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape or sigma1.shape[0] != mu1.shape[0]:
        raise InputError("feature dimension mismatch")
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2)
                  - 2.0 * trace_sqrt_product(sigma1, sigma2))
    return max(value, 0.0)


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """Frechet distance between the Gaussian moments of two feature sets."""
    if a.dim != b.dim:
        raise InputError(f"feature dimension mismatch: {a.dim} vs {b.dim}")
    return frechet_distance(a.mu, a.sigma, b.mu, b.sigma)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    z = np.vstack([x, y])
    d = _sq_dists(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    med = float(np.sqrt(np.median(d[iu])))
    return med if med > 0 else 1.0


def rbf_kernel(a, b, bandwidth: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return np.exp(-_sq_dists(a, b) / (2.0 * bandwidth ** 2))


def _as_features(s: Union[FeatureSet, np.ndarray]) -> np.ndarray:
    x = s.features if isinstance(s, FeatureSet) else np.asarray(s, dtype=np.float64)
    if x is None:
        raise InputError("MMD needs raw features, not only moments")
    return x[:, None] if x.ndim == 1 else x


def mmd2_unbiased(x, y, bandwidth: Optional[float] = None) -> float:
    """Unbiased U-statistic estimate of squared MMD with a Gaussian RBF kernel.

    ``bandwidth=None`` uses the median heuristic. The estimate can be
    slightly negative and is returned unclamped.
    """
    x, y = _as_features(x), _as_features(y)
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise InputError("MMD needs at least 2 samples per set")
    if x.shape[1] != y.shape[1]:
        raise InputError(f"feature dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    kxx = rbf_kernel(x, x, bandwidth)
    kyy = rbf_kernel(y, y, bandwidth)
    kxy = rbf_kernel(x, y, bandwidth)
    np.fill_diagonal(kxx, 0.0)
    np.fill_diagonal(kyy, 0.0)
    return float(kxx.sum() / (m * (m - 1)) + kyy.sum() / (n * (n - 1)) - 2.0 * kxy.mean())
