"""
synthetic.py
Datasets with a planted binary attribute, for checking attribute vectors and
manipulation without face data.
"""
from typing import Tuple

import numpy as np

from utils.data_model import ImageDataset


def planted_embeddings(
    n: int,
    dim: int,
    rng: np.random.Generator,
    strength: float = 2.0,
    positive_rate: float = 0.5,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gaussian embeddings shifted by strength * v when the attribute is present.

    Returns:
        (embeddings (n, dim), labels (n,), unit direction v (dim,))
    """
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    labels = (rng.random(n) < positive_rate).astype(np.int64)
    z = rng.standard_normal((n, dim)) + strength * labels[:, None] * direction
    return z, labels, direction


def bar_mask(image_shape: Tuple[int, int]) -> np.ndarray:
    """The attribute: a solid bar across the bottom two rows"""
    mask = np.zeros(image_shape, dtype=bool)
    mask[-2:, :] = True
    return mask


def planted_images(
    n: int,
    rng: np.random.Generator,
    image_shape: Tuple[int, int] = (8, 8),
    noise_rate: float = 0.15,
    positive_rate: float = 0.5,
) -> ImageDataset:
    """
    Binary images of sparse random dots above the bar region; label 1 images
    also carry the bar.
    """
    labels = (rng.random(n) < positive_rate).astype(np.int64)
    bar = bar_mask(image_shape)
    images = (rng.random((n,) + tuple(image_shape)) < noise_rate).astype(np.uint8)
    images[:, bar] = 0
    images[labels.astype(bool)] |= bar.astype(np.uint8)
    return ImageDataset(images, labels, {"source": "planted", "attribute": "bar"})
