"""
features.py
Feature extractors for the Frechet distance: raw pixels, PCA of pixels, or
the penultimate layer of a trained classifier.
"""
import logging
from typing import Optional

import numpy as np

from embedding.pca import PcaModel, apply_pca, fit_pca
from models.classifier import Classifier, ClassifierConfig, train_classifier
from models.training import TrainingConfig

logger = logging.getLogger(__name__)


class FeatureExtractor:
    """Deterministic map from (N, H, W) images to (N, dim) features"""
    kind = "base"

    def __call__(self, images: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def dim(self) -> int:
        raise NotImplementedError


class RawPixelExtractor(FeatureExtractor):
    kind = "raw"

    def __init__(self, image_shape):
        self.image_shape = tuple(image_shape)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        return images.reshape(len(images), -1)

    @property
    def dim(self) -> int:
        return int(np.prod(self.image_shape))


class PcaExtractor(FeatureExtractor):
    kind = "pca"

    def __init__(self, pca: PcaModel):
        self.pca = pca

    @classmethod
    def fit(cls, images: np.ndarray, dim: int) -> "PcaExtractor":
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        return cls(fit_pca(flat, dim))

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        return apply_pca(self.pca, images.reshape(len(images), -1))

    @property
    def dim(self) -> int:
        return self.pca.output_dim


class ClassifierExtractor(FeatureExtractor):
    kind = "classifier"

    def __init__(self, classifier: Classifier):
        self.classifier = classifier

    def __call__(self, images: np.ndarray) -> np.ndarray:
        return self.classifier.features(images)

    @property
    def dim(self) -> int:
        return self.classifier.config.feature_dim


def train_feature_extractor(
    images: np.ndarray,
    labels: np.ndarray,
    training: TrainingConfig,
    init_rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
    test_images: Optional[np.ndarray] = None,
    test_labels: Optional[np.ndarray] = None,
    feature_dim: int = 64,
):
    """
    Train the classifier backbone on labeled images.

    Returns:
        (ClassifierExtractor, test accuracy or None)
    """
    labels = np.asarray(labels)
    config = ClassifierConfig(
        image_shape=tuple(np.shape(images)[1:]),
        n_classes=int(labels.max()) + 1,
        feature_dim=feature_dim,
    )
    classifier, _ = train_classifier(images, labels, config, training, init_rng, shuffle_rng)
    accuracy = None
    if test_images is not None and test_labels is not None:
        accuracy = classifier.accuracy(test_images, test_labels)
        logger.info(f"Feature extractor test accuracy {accuracy:.4f}")
    return ClassifierExtractor(classifier), accuracy
