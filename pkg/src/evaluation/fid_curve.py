"""
fid_curve.py
Frechet distance between true images and each alpha dataset, as a table.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from evaluation.features import FeatureExtractor
from evaluation.frechet import GaussianStats, frechet_distance, gaussian_stats
from evaluation.interpolation import DEFAULT_ALPHAS, generate_alpha_dataset
from storage.formats import load_csv, save_csv
from utils.data_model import EmbeddingSet

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["embedding_source", "decoder_id", "alpha", "fid", "n", "seed"]


def feature_stats(images: np.ndarray, extractor: FeatureExtractor, batch_size: int = 1024) -> GaussianStats:
    images = np.asarray(images)
    features = np.concatenate([extractor(images[s:s + batch_size]) for s in range(0, len(images), batch_size)])
    return gaussian_stats(features)


def fid_curve(
    embeddings: EmbeddingSet,
    decoder,
    true_images: np.ndarray,
    extractor: FeatureExtractor,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    n: int = 5000,
    seed: int = 0,
    decoder_id: str = "decoder",
    true_stats: Optional[GaussianStats] = None,
) -> pd.DataFrame:
    """
    One row per alpha with the distance between the true images' features and
    the decoded interpolations' features.
    """
    true_stats = true_stats or feature_stats(true_images, extractor)
    rows = []
    for alpha in alphas:
        dataset = generate_alpha_dataset(embeddings, decoder, float(alpha), n, seed)
        fid = frechet_distance(true_stats, feature_stats(dataset.images, extractor))
        logger.info(f"{embeddings.source.value} alpha={alpha:g}: FID {fid:.4f}")
        rows.append({
            "embedding_source": embeddings.source.value,
            "decoder_id": decoder_id,
            "alpha": float(alpha),
            "fid": fid,
            "n": n,
            "seed": seed,
        })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def split_half_fid(images: np.ndarray, extractor: FeatureExtractor, rng: np.random.Generator) -> float:
    """Distance between two random disjoint halves of the same image set"""
    order = rng.permutation(len(images))
    half = len(order) // 2
    return frechet_distance(
        feature_stats(images[order[:half]], extractor),
        feature_stats(images[order[half:2 * half]], extractor),
    )


def write_fid_csv(table: pd.DataFrame, path: Path, config_hash: str = "") -> None:
    save_csv(path, table[CSV_COLUMNS], config_hash)


def read_fid_csv(path: Path) -> pd.DataFrame:
    """FID table; the producing config hash is in `attrs["config_hash"]`"""
    return load_csv(path)
