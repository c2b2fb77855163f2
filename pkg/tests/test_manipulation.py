import numpy as np
import pytest
from numpy.testing import assert_allclose

from evaluation.manipulation import (
    AttributeVector,
    apply_attribute,
    attribute_flip_rate,
    attribute_vector,
    manipulate_image,
    manipulation_grid,
)
from fisher_pipeline import ClassAttribute
from ingest.synthetic import bar_mask, planted_embeddings, planted_images
from models.classifier import ClassifierConfig, train_classifier
from models.decoder import DecoderConfig, train_decoder
from models.training import TrainingConfig
from utils.data_model import Embedding, EmbeddingSet, EmbeddingSource
from utils.errors import ShapeError


class SignDecoder:
    """Decodes to a 2x2 image whose top-left pixel is the sign of z[0]"""

    def mode_image(self, z):
        z = np.atleast_2d(z)
        images = np.zeros((len(z), 2, 2), dtype=np.int64)
        images[:, 0, 0] = z[:, 0] > 0
        return images


class PixelClassifier:
    def predict(self, images):
        return np.asarray(images)[:, 0, 0]


class TestAttributeVector:
    def test_difference_of_class_means(self):
        z = np.array([[1.0, 0.0], [3.0, 2.0], [0.0, 0.0], [0.0, 4.0]])
        labels = np.array([1, 1, 0, 0])
        vector = attribute_vector(z, labels, "smiling")
        assert_allclose(vector.delta, [2.0, 1.0 - 2.0])
        assert (vector.n_pos, vector.n_neg, vector.name, vector.dim) == (2, 2, "smiling", 2)

    def test_accepts_embedding_sets(self, rng):
        z = rng.normal(size=(8, 3))
        labels = np.arange(8) % 2
        vector = attribute_vector(EmbeddingSet(z, np.arange(8), EmbeddingSource.FISHER), labels, "odd")
        assert_allclose(vector.delta, z[1::2].mean(axis=0) - z[::2].mean(axis=0))

    @pytest.mark.parametrize("labels", [np.ones(4), np.zeros(4)])
    def test_empty_class_names_the_attribute(self, labels):
        with pytest.raises(ValueError, match="eyeglasses"):
            attribute_vector(np.zeros((4, 2)), labels, "eyeglasses")

    def test_label_count_must_match(self):
        with pytest.raises(ShapeError):
            attribute_vector(np.zeros((4, 2)), np.array([0, 1, 0]), "bar")

    def test_recovers_planted_direction(self, rng):
        z, labels, direction = planted_embeddings(2000, 16, rng)
        delta = attribute_vector(z, labels, "planted").delta
        cosine = delta @ direction / np.linalg.norm(delta)
        assert np.degrees(np.arccos(np.clip(cosine, -1, 1))) < 10


class TestApply:
    def test_shift(self):
        vector = AttributeVector(np.array([1.0, -1.0]), "a", 1, 1)
        assert_allclose(apply_attribute(np.zeros(2), vector, 2.5), [2.5, -2.5])
        assert_allclose(apply_attribute(np.ones((3, 2)), vector.delta, 0.0), np.ones((3, 2)))

    def test_keeps_embedding_wrapper(self):
        z = Embedding(np.zeros(2), EmbeddingSource.PIXEL, 5)
        moved = apply_attribute(z, np.ones(2), 1.0)
        assert moved.sample_id == 5 and moved.source is EmbeddingSource.PIXEL

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            apply_attribute(np.zeros(3), np.ones(2))

    def test_grid_shape(self, tiny_decoder, rng):
        z = rng.normal(size=(5, 6))
        delta = rng.normal(size=6)
        grid = manipulation_grid(tiny_decoder, z, delta, [0, 2], scales=(-1.0, 0.0, 1.0, 2.0))
        assert grid.shape == (2, 4, 4, 4)
        np.testing.assert_array_equal(grid[:, 1], tiny_decoder.mode_image(z[[0, 2]]))
        np.testing.assert_array_equal(grid[1, 3], manipulate_image(tiny_decoder, z[2:3], delta, 2.0)[0])


class TestFlipRate:
    def setup_method(self):
        self.z = np.array([[-1.0, 0.0], [-0.5, 0.0], [1.0, 0.0], [0.5, 0.0]])
        self.labels = np.array([0, 0, 1, 1])
        self.delta = attribute_vector(self.z, self.labels, "sign")

    def test_full_flip_at_large_scale(self):
        assert attribute_flip_rate(SignDecoder(), PixelClassifier(), self.z, self.labels, self.delta, 3.0) == 1.0

    def test_zero_scale_never_flips(self):
        assert attribute_flip_rate(SignDecoder(), PixelClassifier(), self.z, self.labels, self.delta, 0.0) == 0.0

    def test_wrong_direction_never_flips(self):
        assert attribute_flip_rate(SignDecoder(), PixelClassifier(), self.z, self.labels, self.delta, -3.0) == 0.0

    def test_one_class_is_read_as_the_attribute(self):
        class Fixed:
            def predict(self, images):
                return np.array([3, 7, 7, 1])

        np.testing.assert_array_equal(ClassAttribute(Fixed(), 7).predict(np.zeros((4, 2, 2))), [0, 1, 1, 0])


@pytest.mark.slow
def test_bar_attribute_is_added_and_removed(rng):
    data = planted_images(400, rng)
    z = data.images.reshape(len(data), -1).astype(np.float64)
    decoder, _ = train_decoder(
        z, data.images, DecoderConfig(input_dim=64, dense_width=16, up_channels=8, mid_channels=4,
                                      image_shape=(8, 8), dtype="float64"),
        TrainingConfig(batch_size=32, learning_rate=1e-2, epochs=40),
        np.random.default_rng(0), np.random.default_rng(1), np.random.default_rng(2), val_fraction=0.0,
    )
    classifier, _ = train_classifier(
        data.images, data.labels, ClassifierConfig(image_shape=(8, 8), n_classes=2, feature_dim=16),
        TrainingConfig(batch_size=32, learning_rate=1e-2, epochs=20),
        np.random.default_rng(3), np.random.default_rng(4),
    )
    assert classifier.accuracy(data.images, data.labels) > 0.95
    delta = attribute_vector(z, data.labels, "bar")
    assert_allclose(delta.delta.reshape(8, 8)[bar_mask((8, 8))], 1.0)
    assert attribute_flip_rate(decoder, classifier, z, data.labels, delta, 3.0) >= 0.7
    assert attribute_flip_rate(decoder, classifier, z, data.labels, delta, 0.0) == 0.0
