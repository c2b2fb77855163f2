"""
frechet.py
Gaussian moments of feature sets and the Frechet distance between them.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from utils.errors import FisherEmbedError, ShapeError

REGULARIZATION = 1e-6
PSD_TOLERANCE = 1e-6


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance (n - 1), symmetrized"""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ValueError(f"gaussian_stats needs at least 2 samples, got {len(x)}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (len(x) - 1)
    return GaussianStats(mean, (cov + cov.T) / 2, len(x))


def _rank_deficient(cov: np.ndarray) -> bool:
    values = linalg.eigvalsh(cov)
    return values[0] <= max(values[-1], 0.0) * len(values) * np.finfo(np.float64).eps


def _psd_sqrt(matrix: np.ndarray, what: str) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    _check_psd(values, np.trace(matrix), what)
    return (vectors * np.sqrt(np.maximum(values, 0))) @ vectors.T


def _check_psd(values: np.ndarray, trace: float, what: str) -> None:
    if values.size and values.min() < -PSD_TOLERANCE * max(abs(trace), 1.0):
        raise FisherEmbedError(f"{what} is not positive semidefinite (eigenvalue {values.min():.3e})")


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """
    ||m1 - m2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of (S1 S2)^(1/2) is taken as the sum of square roots of the
    eigenvalues of A S2 A with A = S1^(1/2), which is symmetric. When either
    covariance is singular both get 1e-6 * mean(diag) added to the diagonal.
    """
    if s1.dim != s2.dim:
        raise ShapeError("frechet_distance", "feature dim", s1.dim, s2.dim)
    cov1, cov2 = s1.cov, s2.cov
    if _rank_deficient(cov1) or _rank_deficient(cov2):
        eye = np.eye(s1.dim)
        cov1 = cov1 + REGULARIZATION * max(np.mean(np.diag(cov1)), 1e-12) * eye
        cov2 = cov2 + REGULARIZATION * max(np.mean(np.diag(cov2)), 1e-12) * eye

    root = _psd_sqrt(cov1, "first covariance")
    inner = root @ cov2 @ root
    values = linalg.eigvalsh((inner + inner.T) / 2)
    _check_psd(values, np.trace(inner), "A S2 A")
    trace_sqrt = float(np.sum(np.sqrt(np.maximum(values, 0))))

    diff = s1.mean - s2.mean
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * trace_sqrt)
