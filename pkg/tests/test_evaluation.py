import numpy as np
import pytest
from numpy.testing import assert_allclose

from evaluation.features import PcaExtractor, RawPixelExtractor, train_feature_extractor
from evaluation.fid_curve import CSV_COLUMNS, feature_stats, fid_curve, read_fid_csv, split_half_fid, write_fid_csv
from evaluation.frechet import frechet_distance
from evaluation.interpolation import (
    draw_pairs,
    generate_alpha_dataset,
    interpolate,
    interpolation_grid,
    reconstruction_grid,
)
from models.training import TrainingConfig
from utils.data_model import Embedding, EmbeddingSet, EmbeddingSource
from utils.errors import ShapeError


@pytest.fixture
def embedding_set(rng):
    return EmbeddingSet(rng.normal(size=(10, 6)), np.arange(100, 110), EmbeddingSource.FISHER)


class TestInterpolate:
    def test_endpoints_and_midpoint(self, rng):
        a, b = rng.normal(size=4), rng.normal(size=4)
        assert_allclose(interpolate(a, b, 0.0), a)
        assert_allclose(interpolate(a, b, 1.0), b)
        assert_allclose(interpolate(a, b, 0.5), (a + b) / 2)

    def test_keeps_embedding_wrapper(self, rng):
        z = Embedding(rng.normal(size=3), EmbeddingSource.ACTIVATION, 4)
        mixed = interpolate(z, np.zeros(3), 0.25)
        assert mixed.source is EmbeddingSource.ACTIVATION and mixed.sample_id == 4
        assert_allclose(mixed.values, 0.75 * z.values)

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            interpolate(np.zeros(2), np.ones(2), alpha)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            interpolate(np.zeros(2), np.ones(3), 0.5)


class TestAlphaDatasets:
    def test_same_pairs_for_every_alpha(self, embedding_set, tiny_decoder):
        first = generate_alpha_dataset(embedding_set, tiny_decoder, 0.0, 25, seed=3)
        second = generate_alpha_dataset(embedding_set, tiny_decoder, 0.5, 25, seed=3)
        np.testing.assert_array_equal(first.pairs, second.pairs)
        np.testing.assert_array_equal(first.pairs, draw_pairs(10, 25, np.random.default_rng(3)))
        assert first.images.shape == (25, 4, 4)

    def test_alpha_zero_decodes_first_endpoint(self, embedding_set, tiny_decoder):
        dataset = generate_alpha_dataset(embedding_set, tiny_decoder, 0.0, 12, seed=1, batch_size=5)
        expected = tiny_decoder.mode_image(embedding_set.vectors[dataset.pairs[:, 0]])
        np.testing.assert_array_equal(dataset.images, expected)

    def test_deterministic(self, embedding_set, tiny_decoder):
        a = generate_alpha_dataset(embedding_set, tiny_decoder, 0.375, 20, seed=9)
        b = generate_alpha_dataset(embedding_set, tiny_decoder, 0.375, 20, seed=9)
        np.testing.assert_array_equal(a.images, b.images)

    def test_pairs_need_a_pool(self):
        with pytest.raises(ValueError):
            draw_pairs(0, 5, np.random.default_rng(0))


class TestGrids:
    def test_interpolation_grid_shape(self, embedding_set, tiny_decoder, binary_images):
        pairs = np.array([[0, 1], [2, 3], [4, 5]])
        grid = interpolation_grid(embedding_set, tiny_decoder, pairs, [0.0, 0.5, 1.0])
        assert grid.shape == (3, 3, 4, 4)
        framed = interpolation_grid(embedding_set, tiny_decoder, pairs, [0.0, 0.5, 1.0], endpoints=binary_images)
        assert framed.shape == (3, 5, 4, 4)
        np.testing.assert_array_equal(framed[1, 0], binary_images[2])
        np.testing.assert_array_equal(framed[1, -1], binary_images[3])
        np.testing.assert_array_equal(framed[:, 1:-1], grid)

    def test_reconstruction_grid(self, embedding_set, tiny_decoder, binary_images):
        grid = reconstruction_grid(embedding_set, tiny_decoder, binary_images, [1, 7])
        assert grid.shape == (2, 2, 4, 4)
        np.testing.assert_array_equal(grid[1, 0], binary_images[7])
        np.testing.assert_array_equal(grid[1, 1], tiny_decoder.mode_image(embedding_set.vectors[7:8])[0])


class TestFidCurve:
    def test_one_row_per_alpha(self, embedding_set, tiny_decoder, rng):
        true_images = (rng.random((40, 4, 4)) < 0.5).astype(np.uint8)
        extractor = RawPixelExtractor((4, 4))
        table = fid_curve(embedding_set, tiny_decoder, true_images, extractor, alphas=[0.0, 0.5], n=30, seed=2,
                          decoder_id="tiny")
        assert list(table.columns) == CSV_COLUMNS
        assert list(table["alpha"]) == [0.0, 0.5]
        assert set(table["embedding_source"]) == {"fisher"}
        assert set(table["decoder_id"]) == {"tiny"}
        assert np.all(table["fid"] >= -1e-8)
        again = fid_curve(embedding_set, tiny_decoder, true_images, extractor, alphas=[0.0, 0.5], n=30, seed=2,
                          decoder_id="tiny")
        np.testing.assert_array_equal(table["fid"], again["fid"])

    def test_csv_round_trip(self, embedding_set, tiny_decoder, rng, tmp_path):
        true_images = (rng.random((40, 4, 4)) < 0.5).astype(np.uint8)
        table = fid_curve(embedding_set, tiny_decoder, true_images, RawPixelExtractor((4, 4)), alphas=[0.25], n=20)
        write_fid_csv(table, tmp_path / "fid.csv", "77aa")
        loaded = read_fid_csv(tmp_path / "fid.csv")
        assert list(loaded.columns) == CSV_COLUMNS
        assert loaded.attrs["config_hash"] == "77aa"
        assert loaded["fid"][0] == pytest.approx(table["fid"][0], rel=1e-9)

    def test_split_half_baseline_is_small(self, rng):
        images = (rng.random((400, 4, 4)) < 0.3).astype(np.uint8)
        extractor = RawPixelExtractor((4, 4))
        baseline = split_half_fid(images, extractor, np.random.default_rng(0))
        shifted = (rng.random((200, 4, 4)) < 0.7).astype(np.uint8)
        far = frechet_distance(feature_stats(images, extractor), feature_stats(shifted, extractor))
        assert -1e-8 <= baseline < far


class TestExtractors:
    def test_raw_pixels(self, binary_images):
        extractor = RawPixelExtractor((4, 4))
        features = extractor(binary_images)
        assert features.shape == (12, 16) and extractor.dim == 16
        assert_allclose(features[3], binary_images[3].reshape(-1))

    def test_pca_of_pixels(self, rng):
        images = rng.random((50, 4, 4))
        extractor = PcaExtractor.fit(images, 5)
        assert extractor(images).shape == (50, 5) and extractor.dim == 5

    def test_classifier_features(self, rng):
        images = rng.random((40, 4, 4))
        labels = np.arange(40) % 2
        extractor, accuracy = train_feature_extractor(
            images, labels, TrainingConfig(batch_size=10, learning_rate=1e-2, epochs=2),
            np.random.default_rng(0), np.random.default_rng(1),
            test_images=images, test_labels=labels, feature_dim=8,
        )
        assert extractor(images).shape == (40, 8) and extractor.dim == 8
        assert 0.0 <= accuracy <= 1.0
        np.testing.assert_array_equal(extractor(images), extractor(images))
