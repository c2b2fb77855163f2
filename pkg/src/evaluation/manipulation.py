"""
manipulation.py
Attribute vectors in embedding space: delta = mean(with) - mean(without),
applied as z + scale * delta before decoding.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from utils.data_model import Embedding, EmbeddingSet
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 3.0
GRID_SCALES = (-3.0, 0.0, 3.0)


@dataclass
class AttributeVector:
    delta: np.ndarray
    name: str
    n_pos: int
    n_neg: int

    @property
    def dim(self) -> int:
        return len(self.delta)


def _matrix(embeddings) -> np.ndarray:
    return np.asarray(embeddings.vectors if isinstance(embeddings, EmbeddingSet) else embeddings, dtype=np.float64)


def attribute_vector(embeddings: Union[EmbeddingSet, np.ndarray], labels: np.ndarray, name: str) -> AttributeVector:
    """
    Args:
        embeddings: (N, dim) embeddings in the space the decoder consumes
        labels: N binary labels, 1 = has the attribute
        name: Attribute name used in messages and files
    """
    z = _matrix(embeddings)
    labels = np.asarray(labels)
    if len(labels) != len(z):
        raise ShapeError("attribute_vector", "labels", len(z), len(labels))
    positive = labels.astype(bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        missing = "with" if n_pos == 0 else "without"
        raise ValueError(f"attribute '{name}': no embeddings {missing} the attribute")
    delta = z[positive].mean(axis=0) - z[~positive].mean(axis=0)
    logger.info(f"attribute '{name}': |delta| = {np.linalg.norm(delta):.4f} from {n_pos} pos / {n_neg} neg")
    return AttributeVector(delta, name, n_pos, n_neg)


def apply_attribute(z, delta: Union[AttributeVector, np.ndarray], scale: float = DEFAULT_SCALE):
    """z + scale * delta; keeps the Embedding wrapper when given one"""
    d = delta.delta if isinstance(delta, AttributeVector) else np.asarray(delta)
    values = z.values if isinstance(z, Embedding) else np.asarray(z, dtype=np.float64)
    if values.shape[-1] != d.shape[-1]:
        raise ShapeError("apply_attribute", "embedding dim", d.shape[-1], values.shape[-1])
    moved = values + scale * d
    if isinstance(z, Embedding):
        return Embedding(moved, z.source, z.sample_id)
    return moved


def manipulate_image(decoder, z, delta, scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Mode image of the shifted embedding(s)"""
    return decoder.mode_image(apply_attribute(z, delta, scale))


def manipulation_grid(
    decoder,
    embeddings: Union[EmbeddingSet, np.ndarray],
    delta,
    indices: Sequence[int],
    scales: Sequence[float] = GRID_SCALES,
) -> np.ndarray:
    """Rows = samples, columns = scales; (rows, cols, H, W)"""
    z = _matrix(embeddings)[np.asarray(indices)]
    columns = [manipulate_image(decoder, z, delta, s) for s in scales]
    return np.stack(columns, axis=1)


def attribute_flip_rate(
    decoder,
    classifier,
    embeddings: Union[EmbeddingSet, np.ndarray],
    labels: np.ndarray,
    delta,
    scale: float = DEFAULT_SCALE,
) -> float:
    """
    Fraction of samples whose attribute prediction changes after moving them
    towards the opposite class: samples without the attribute get +scale*delta,
    samples with it get -scale*delta. The reference prediction is the one on
    the unshifted reconstruction, so scale 0 always gives 0.
    """
    z = _matrix(embeddings)
    sign = np.where(np.asarray(labels).astype(bool), -1.0, 1.0)
    d = delta.delta if isinstance(delta, AttributeVector) else np.asarray(delta)
    before = classifier.predict(decoder.mode_image(z))
    after = classifier.predict(decoder.mode_image(z + scale * sign[:, None] * d))
    return float(np.mean(before != after))
