"""
reduce.py
Per-sample embedding chain: high-dimensional vector (Fisher score, layer
activations or raw pixels) -> random projection -> optional PCA.
"""
import logging
from typing import Iterator, Optional, Sequence

import numpy as np

from embedding.fisher import ScoreStandardizer, fisher_scores
from embedding.pca import PcaModel, apply_pca
from embedding.projection import SparseProjection, project_stream
from utils.data_model import EmbeddingSet, EmbeddingSource
from utils.errors import ShapeError

logger = logging.getLogger(__name__)


def source_dim(model, source: EmbeddingSource, layer_index: Optional[int] = None) -> int:
    """Length of the vector a source produces before projection"""
    height, width = model.config.image_shape
    if source is EmbeddingSource.FISHER:
        return model.n_params
    if source is EmbeddingSource.ACTIVATION:
        model.resolve_layer(layer_index)
        return model.config.filters * height * width
    if source is EmbeddingSource.PIXEL:
        return height * width
    raise ValueError(f"source {source.value} has no high-dimensional vector")


def source_vectors(
    images: np.ndarray,
    model,
    source: EmbeddingSource,
    layer_index: Optional[int] = None,
    standardizer: Optional[ScoreStandardizer] = None,
    threads: int = 1,
    batch_size: int = 64,
) -> Iterator[np.ndarray]:
    """High-dimensional vector of every image, in order"""
    if source is EmbeddingSource.FISHER:
        for score in fisher_scores(model, images, threads=threads):
            yield score.values if standardizer is None else standardizer.standardize(score)
    elif source is EmbeddingSource.ACTIVATION:
        for start in range(0, len(images), batch_size):
            yield from model.activations_batch(images[start:start + batch_size], layer_index)
    elif source is EmbeddingSource.PIXEL:
        for image in images:
            yield np.asarray(image, dtype=np.float64).reshape(-1)
    else:
        raise ValueError(f"source {source.value} has no high-dimensional vector")


def reduce(
    images: np.ndarray,
    model,
    projection: SparseProjection,
    pca: Optional[PcaModel] = None,
    source: EmbeddingSource = EmbeddingSource.FISHER,
    layer_index: Optional[int] = None,
    standardizer: Optional[ScoreStandardizer] = None,
    sample_ids: Optional[Sequence[int]] = None,
    threads: int = 1,
    buffer_size: int = 256,
) -> EmbeddingSet:
    """
    Embed every image as z_i = G (P v_i - m) (or P v_i without PCA).

    Args:
        images: (N, H, W) images valid for `model`
        model: Trained PixelModel (unused for the pixel source)
        projection: P, with n_in equal to the source's vector length
        pca: Optional PCA applied after projection
        source: Fisher score, activations of `layer_index`, or raw pixels
        standardizer: Standardize Fisher scores before projecting
        sample_ids: Ids stored with the embeddings; default 0..N-1
        threads: Worker threads for Fisher score extraction
        buffer_size: Scores held before each projection pass

    Returns:
        EmbeddingSet of float32 vectors
    """
    if len(images) == 0:
        raise ValueError("reduce needs at least one image")
    if source is EmbeddingSource.PIXEL:
        n_in = int(np.prod(np.shape(images)[1:]))
    else:
        n_in = source_dim(model, source, layer_index)
    if projection.n_in != n_in:
        raise ShapeError("reduce", f"{source.value} vector length", projection.n_in, n_in)
    if pca is not None and pca.input_dim != projection.p_out:
        raise ShapeError("reduce", "PCA input dim", projection.p_out, pca.input_dim)
    if standardizer is not None and source is not EmbeddingSource.FISHER:
        raise ValueError("score standardization only applies to the fisher source")

    vectors = source_vectors(images, model, source, layer_index, standardizer, threads)
    projected = np.stack(list(project_stream(projection, vectors, buffer_size)))
    if pca is not None:
        projected = apply_pca(pca, projected)

    ids = np.arange(len(images), dtype=np.int64) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    header = {
        "source": source.value,
        "projection": projection.describe(),
        "pca_dim": None if pca is None else pca.output_dim,
        "standardized": standardizer is not None,
        "layer_index": layer_index,
    }
    logger.info(f"Embedded {len(images)} images from {source.value}: {n_in} -> {projected.shape[1]} dims")
    return EmbeddingSet(projected.astype(np.float32), ids, source, header)


def reduce_with_pca(embeddings: EmbeddingSet, pca: PcaModel) -> EmbeddingSet:
    """Apply a fitted PCA to an already projected set"""
    header = {**embeddings.header, "pca_dim": pca.output_dim}
    vectors = apply_pca(pca, embeddings.vectors).astype(np.float32)
    return EmbeddingSet(vectors, embeddings.sample_ids, embeddings.source, header)
