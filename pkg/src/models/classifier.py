"""
classifier.py
Small convolutional classifier. Its penultimate layer is the feature space of
the Frechet distance; the same network doubles as an attribute classifier.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from autodiff import ops
from autodiff.params import ParamSet
from autodiff.tensor import Tensor
from models.training import TrainingConfig, TrainingHistory, fit
from utils.errors import ShapeError

logger = logging.getLogger(__name__)


def _strided(extent: int) -> int:
    return (extent + 2 - 3) // 2 + 1


@dataclass
class ClassifierConfig:
    image_shape: Tuple[int, int] = (28, 28)
    n_classes: int = 10
    channels: Tuple[int, int] = (16, 32)
    feature_dim: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self.channels = tuple(int(v) for v in self.channels)
        if self.n_classes < 2:
            raise ValueError("a classifier needs at least 2 classes")

    @property
    def flat_dim(self) -> int:
        h, w = (_strided(_strided(e)) for e in self.image_shape)
        return self.channels[1] * h * w

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_shape"] = list(self.image_shape)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "ClassifierConfig":
        return cls(**values)


class Classifier:
    """conv(3x3, s2) -> conv(3x3, s2) -> linear(feature_dim) -> linear(n_classes), ReLU between"""

    def __init__(self, config: ClassifierConfig, params: ParamSet):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ClassifierConfig, rng: np.random.Generator) -> "Classifier":
        c1, c2 = config.channels
        layout = [
            ("conv1.weight", (c1, 1, 3, 3), 9),
            ("conv1.bias", (c1,), None),
            ("conv2.weight", (c2, c1, 3, 3), c1 * 9),
            ("conv2.bias", (c2,), None),
            ("fc.weight", (config.feature_dim, config.flat_dim), config.flat_dim),
            ("fc.bias", (config.feature_dim,), None),
            ("out.weight", (config.n_classes, config.feature_dim), config.feature_dim),
            ("out.bias", (config.n_classes,), None),
        ]
        params = ParamSet()
        for name, shape, fan_in in layout:
            values = np.zeros(shape) if fan_in is None else rng.uniform(-1, 1, size=shape) * np.sqrt(6.0 / fan_in)
            params.add(name, Tensor(values.astype(config.dtype), requires_grad=True))
        return cls(config, params)

    def _as_batch(self, images) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != self.config.image_shape:
            raise ShapeError("Classifier", "image shape", self.config.image_shape, images.shape[1:])
        return Tensor(images[:, None].astype(self.params.dtype))

    def forward(self, images) -> Tuple[Tensor, Tensor]:
        """(features (N, feature_dim), logits (N, n_classes))"""
        p = self.params
        h = ops.relu(ops.conv2d(self._as_batch(images), p["conv1.weight"], p["conv1.bias"], padding=1, stride=2))
        h = ops.relu(ops.conv2d(h, p["conv2.weight"], p["conv2.bias"], padding=1, stride=2))
        features = ops.relu(ops.linear(ops.flatten(h), p["fc.weight"], p["fc.bias"]))
        return features, ops.linear(features, p["out.weight"], p["out.bias"])

    def loss(self, images, labels) -> Tensor:
        _, logits = self.forward(images)
        labels = np.asarray(labels)
        return ops.scale(ops.categorical_logprob(logits, labels, axis=1), -1.0 / len(labels))

    def features(self, images, batch_size: int = 512) -> np.ndarray:
        images = np.asarray(images)
        chunks = [self.forward(images[s:s + batch_size])[0].data for s in range(0, len(images), batch_size)]
        return np.concatenate(chunks).astype(np.float64)

    def predict(self, images, batch_size: int = 512) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        chunks = [self.forward(images[s:s + batch_size])[1].data for s in range(0, len(images), batch_size)]
        return np.argmax(np.concatenate(chunks), axis=1)

    def accuracy(self, images, labels) -> float:
        return float(np.mean(self.predict(images) == np.asarray(labels)))


def train_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    config: ClassifierConfig,
    training: TrainingConfig,
    init_rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
) -> Tuple[Classifier, TrainingHistory]:
    """Cross-entropy training; returns the classifier and its loss curve"""
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ShapeError("train_classifier", "labels", len(images), len(labels))
    if labels.min() < 0 or labels.max() >= config.n_classes:
        raise ValueError(f"labels must lie in [0, {config.n_classes})")
    classifier = Classifier.initialize(config, init_rng)
    history = fit(
        classifier.params,
        lambda idx: classifier.loss(images[idx], labels[idx]),
        len(images),
        training,
        shuffle_rng,
        what="Classifier",
    )
    logger.info(f"Classifier train accuracy {classifier.accuracy(images, labels):.4f}")
    return classifier, history
