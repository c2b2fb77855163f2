"""
interpolation.py
Convex combinations of embedding pairs, decoded into alpha datasets and grids.
"""
import logging
import sys
from typing import Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from utils.data_model import AlphaDataset, Embedding, EmbeddingSet
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.0, 0.125, 0.25, 0.375, 0.5)


def _values(z) -> np.ndarray:
    return np.asarray(z.values if isinstance(z, Embedding) else z, dtype=np.float64)


def interpolate(z1: Union[Embedding, np.ndarray], z2: Union[Embedding, np.ndarray], alpha: float):
    """(1 - alpha) z1 + alpha z2; returns an Embedding when z1 is one"""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    a, b = _values(z1), _values(z2)
    if a.shape != b.shape:
        raise ShapeError("interpolate", "embedding dim", a.shape, b.shape)
    mixed = (1.0 - alpha) * a + alpha * b
    if isinstance(z1, Embedding):
        return Embedding(mixed, z1.source, z1.sample_id)
    return mixed


def draw_pairs(n_pool: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n index pairs drawn uniformly with replacement, shape (n, 2)"""
    if n_pool < 1 or n < 1:
        raise ValueError("need a non-empty pool and n >= 1")
    return rng.integers(0, n_pool, size=(n, 2))


def generate_alpha_dataset(
    embeddings: EmbeddingSet,
    decoder,
    alpha: float,
    n: int,
    seed: int,
    batch_size: int = 256,
) -> AlphaDataset:
    """
    Decode n interpolations between random embedding pairs.

    Pairs depend only on (seed, pool size, n), so every alpha of one sweep
    uses the same pairs.
    """
    pairs = draw_pairs(len(embeddings), n, np.random.default_rng(seed))
    vectors = embeddings.vectors.astype(np.float64)
    images = []
    progress = tqdm(range(0, n, batch_size), desc=f"alpha={alpha:g}", leave=False, disable=not sys.stderr.isatty())
    for start in progress:
        chunk = pairs[start:start + batch_size]
        mixed = (1.0 - alpha) * vectors[chunk[:, 0]] + alpha * vectors[chunk[:, 1]]
        images.append(decoder.mode_image(mixed))
    return AlphaDataset(alpha=alpha, images=np.concatenate(images), seed=seed, pairs=pairs)


def interpolation_grid(
    embeddings: EmbeddingSet,
    decoder,
    pairs: np.ndarray,
    alphas: Sequence[float],
    endpoints: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Rows = pairs, columns = alphas. With `endpoints` (the true images of the
    pool) each row is framed by the two original images.

    Returns:
        (rows, cols, H, W) integer images
    """
    vectors = embeddings.vectors.astype(np.float64)
    rows = []
    for i, j in pairs:
        mixed = np.stack([interpolate(vectors[i], vectors[j], a) for a in alphas])
        row = list(decoder.mode_image(mixed))
        if endpoints is not None:
            row = [endpoints[i]] + row + [endpoints[j]]
        rows.append(np.stack(row))
    return np.stack(rows)


def reconstruction_grid(embeddings: EmbeddingSet, decoder, images: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Rows of (true image, decoded reconstruction), shape (len(indices), 2, H, W)"""
    indices = np.asarray(indices)
    decoded = decoder.mode_image(embeddings.vectors[indices].astype(np.float64))
    return np.stack([np.stack([images[i], d]) for i, d in zip(indices, decoded)])
