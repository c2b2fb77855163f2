"""
data_model.py
Containers passed between pipeline stages
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional

import numpy as np

from utils.errors import NonFiniteError, ShapeError


class EmbeddingSource(Enum):
    """Where an embedding vector came from"""
    FISHER = "fisher"
    ACTIVATION = "activation"
    PIXEL = "pixel"
    ATTRIBUTE = "attribute"


@dataclass
class ImageDataset:
    """Images with optional labels; images are (n, H, W)"""
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ShapeError("ImageDataset", "ndim", 3, self.images.ndim)
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ShapeError("ImageDataset", "labels", len(self.images), len(self.labels))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "ImageDataset":
        """Select a subset of samples by index"""
        labels = None if self.labels is None else self.labels[indices]
        return ImageDataset(self.images[indices], labels, dict(self.metadata))


@dataclass
class Embedding:
    """One reduced-dimension vector z_i"""
    values: np.ndarray
    source: EmbeddingSource
    sample_id: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"embedding of sample {self.sample_id}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass
class EmbeddingSet:
    """
    A collection of embeddings stored as one (n, dim) matrix.

    The header records everything needed to reproduce the projection chain
    that produced the vectors (seed, density, dims, PCA dim, model hash).
    """
    vectors: np.ndarray
    sample_ids: np.ndarray
    source: EmbeddingSource
    header: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ShapeError("EmbeddingSet", "ndim", 2, self.vectors.ndim)
        if len(self.sample_ids) != len(self.vectors):
            raise ShapeError("EmbeddingSet", "sample_ids", len(self.vectors), len(self.sample_ids))
        if not np.all(np.isfinite(self.vectors)):
            raise NonFiniteError(f"{self.source.value} embedding set")

    def __len__(self) -> int:
        return len(self.vectors)

    def __iter__(self) -> Iterator[Embedding]:
        for sample_id, values in zip(self.sample_ids, self.vectors):
            yield Embedding(values, self.source, int(sample_id))

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def get(self, index: int) -> Embedding:
        """Embedding at a row index"""
        return Embedding(self.vectors[index], self.source, int(self.sample_ids[index]))

    @classmethod
    def from_embeddings(cls, embeddings: List[Embedding], header: Optional[Dict[str, Any]] = None) -> "EmbeddingSet":
        """Stack single embeddings into one set"""
        if not embeddings:
            raise ValueError("cannot build an EmbeddingSet from no embeddings")
        return cls(
            vectors=np.stack([e.values for e in embeddings]),
            sample_ids=np.array([e.sample_id for e in embeddings], dtype=np.int64),
            source=embeddings[0].source,
            header=dict(header or {}),
        )


@dataclass
class AlphaDataset:
    """Decoded images of one mixing coefficient"""
    alpha: float
    images: np.ndarray
    seed: int
    pairs: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if len(self.images) != len(self.pairs):
            raise ShapeError("AlphaDataset", "N", len(self.pairs), len(self.images))

    @property
    def n(self) -> int:
        return len(self.images)
