"""
pca.py
Principal component analysis by symmetric eigendecomposition, using the
covariance matrix or the Gram matrix, whichever is smaller.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from utils.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return int(self.components.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def explained_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        return self.explained_variance / total if total > 0 else np.zeros_like(self.explained_variance)


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive"""
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1
    return vectors * signs


def fit_pca(data: np.ndarray, out_dim: int) -> PcaModel:
    """
    Top-out_dim principal components of the rows of `data`.

    Components whose eigenvalue is numerically zero are dropped with a
    warning, so a rank-deficient input yields fewer than out_dim components.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("fit_pca", "ndim", 2, x.ndim)
    n, dim = x.shape
    if n < 2:
        raise ValueError("fit_pca needs at least 2 samples")
    if not 1 <= out_dim <= min(n, dim):
        raise ValueError(f"out_dim must lie in [1, min(n_samples, dim)] = [1, {min(n, dim)}], got {out_dim}")

    mean = x.mean(axis=0)
    centered = x - mean
    if n >= dim:
        cov = centered.T @ centered / (n - 1)
        values, vectors = linalg.eigh(cov, subset_by_index=[dim - out_dim, dim - 1])
        values, vectors = values[::-1], vectors[:, ::-1]
    else:
        gram = centered @ centered.T / (n - 1)
        values, left = linalg.eigh(gram, subset_by_index=[n - out_dim, n - 1])
        values, left = values[::-1], left[:, ::-1]
        safe = np.sqrt(np.maximum(values, 0) * (n - 1))
        safe[safe == 0] = 1
        vectors = centered.T @ left / safe

    total_variance = float(np.sum(centered ** 2) / (n - 1))
    tolerance = total_variance * max(n, dim) * np.finfo(np.float64).eps
    rank = int(np.sum(values > tolerance))
    if rank < out_dim:
        logger.warning(f"PCA input has rank {rank} < requested {out_dim}; keeping {rank} components")
        rank = max(rank, 1)
        values, vectors = values[:rank], vectors[:, :rank]

    vectors = _orient(vectors)
    return PcaModel(mean=mean, components=vectors.T.copy(), explained_variance=np.maximum(values, 0))


def apply_pca(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """G (v - mean) for a vector or each row of a matrix"""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise ShapeError("apply_pca", "dim", model.input_dim, v.shape[-1])
    return (v - model.mean) @ model.components.T


def invert_pca(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Back to the input space: mean + G^T z"""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.output_dim:
        raise ShapeError("invert_pca", "dim", model.output_dim, z.shape[-1])
    return model.mean + z @ model.components
