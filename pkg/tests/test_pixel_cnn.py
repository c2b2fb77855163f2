import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from autodiff.gradcheck import gradient_check
from conftest import randomize, tiny_pixel_model
from models.pixel_cnn import (
    MaskKind,
    MaskSpec,
    OutputKind,
    PixelModel,
    PixelModelConfig,
    activations,
    build_mask,
    log_prob,
    sample,
    train_pixel_model,
)
from models.training import TrainingConfig
from utils.errors import ShapeError


def all_binary_images(height, width):
    return np.array(list(itertools.product([0, 1], repeat=height * width)), dtype=np.uint8).reshape(-1, height, width)


class TestMasks:
    def test_kind_a_hides_centre(self):
        mask = build_mask(MaskSpec(MaskKind.A, 3)).data[0, 0]
        assert_allclose(mask, [[1, 1, 1], [1, 0, 0], [0, 0, 0]])

    def test_kind_b_keeps_centre(self):
        mask = build_mask(MaskSpec(MaskKind.B, 5, 2, 3)).data
        assert mask.shape == (3, 2, 5, 5)
        assert mask[0, 0, 2, 2] == 1
        assert mask[1, 1, 2, 3] == 0
        assert mask[:, :, 3:].sum() == 0

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            build_mask(MaskSpec(MaskKind.A, 4))

    def test_config_rejects_wrong_padding(self):
        with pytest.raises(ValueError):
            PixelModelConfig(kernel_size=7, padding=2)


class TestLikelihood:
    @pytest.mark.parametrize("shape", [(2, 2), (3, 3)])
    def test_probabilities_sum_to_one(self, shape):
        for draw in range(5):
            model = tiny_pixel_model(np.random.default_rng(draw), image_shape=shape)
            total = np.exp(model.log_prob_batch(all_binary_images(*shape))).sum()
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_categorical_probabilities_sum_to_one(self, rng):
        config = PixelModelConfig(n_layers=2, kernel_size=3, filters=4, image_shape=(2, 2),
                                  output=OutputKind.CATEGORICAL, levels=3, dtype="float64")
        model = PixelModel.initialize(config, rng)
        randomize(model.params, rng, scale=0.5)
        images = np.array(list(itertools.product(range(3), repeat=4))).reshape(-1, 2, 2)
        assert np.exp(model.log_prob_batch(images)).sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_model_is_uniform(self):
        model = PixelModel.zeros(PixelModelConfig(n_layers=2, kernel_size=3, filters=4, image_shape=(4, 4)))
        image = np.eye(4, dtype=np.uint8)
        assert log_prob(model, image) == pytest.approx(-16 * np.log(2), rel=1e-6)

    def test_log_prob_matches_batch(self, tiny_model, binary_images):
        batch = tiny_model.log_prob_batch(binary_images)
        singles = [tiny_model.log_prob(image) for image in binary_images]
        assert_allclose(batch, singles, rtol=1e-10)

    def test_rejects_non_binary_images(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model.log_prob(np.full((4, 4), 0.5))

    def test_rejects_wrong_shape(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.log_prob(np.zeros((5, 5), dtype=np.uint8))


class TestMasking:
    def test_perturbing_a_pixel_leaves_earlier_conditionals_unchanged(self, rng):
        model = tiny_pixel_model(rng, image_shape=(4, 4), n_layers=3)
        height, width = model.config.image_shape
        for _ in range(20):
            image = (rng.random((height, width)) < 0.5).astype(np.uint8)
            base = model.conditional_logits(image)[0, 0].reshape(-1)
            for j in range(height * width):
                flipped = image.copy().reshape(-1)
                flipped[j] = 1 - flipped[j]
                logits = model.conditional_logits(flipped.reshape(height, width))[0, 0].reshape(-1)
                np.testing.assert_array_equal(logits[:j + 1], base[:j + 1])

    def test_first_pixel_conditional_ignores_image(self, tiny_model, binary_images):
        logits = tiny_model.conditional_logits(binary_images)[:, 0, 0, 0]
        assert_allclose(logits, logits[0], rtol=1e-12)


class TestGradients:
    def test_log_prob_gradients_match_finite_differences(self, tiny_model, binary_images):
        result = gradient_check(lambda: tiny_model.log_prob_tensor(binary_images[:3]), tiny_model.params)
        assert result.passed(1e-4), f"worst {result.worst}: {result.max_rel_error:.2e}"


class TestActivationsAndSampling:
    def test_default_layer_is_second_to_last(self, rng):
        model = tiny_pixel_model(rng, n_layers=3)
        assert model.resolve_layer(None) == 1
        assert activations(model, np.zeros((4, 4), dtype=np.uint8)).shape == (4 * 16,)

    def test_layer_out_of_range(self, tiny_model):
        with pytest.raises(IndexError):
            tiny_model.activations(np.zeros((4, 4), dtype=np.uint8), layer_index=5)

    def test_activations_batch_matches_single(self, tiny_model, binary_images):
        batch = tiny_model.activations_batch(binary_images[:3], 0)
        assert_allclose(batch[1], tiny_model.activations(binary_images[1], 0).data)

    def test_sample_shape_and_determinism(self, tiny_model):
        one = sample(tiny_model, np.random.default_rng(5))
        assert one.shape == (4, 4)
        assert set(np.unique(one)) <= {0, 1}
        again = sample(tiny_model, np.random.default_rng(5))
        np.testing.assert_array_equal(one, again)
        assert sample(tiny_model, np.random.default_rng(5), n=3).shape == (3, 4, 4)

    def test_sample_frequencies_match_likelihood(self):
        model = tiny_pixel_model(np.random.default_rng(3), image_shape=(2, 2))
        images = all_binary_images(2, 2)
        exact = np.exp(model.log_prob_batch(images))
        drawn = model.sample(4000, np.random.default_rng(4))
        codes = drawn.reshape(len(drawn), -1) @ (2 ** np.arange(3, -1, -1))
        empirical = np.bincount(codes, minlength=16) / len(drawn)
        assert_allclose(empirical, exact, atol=0.03)


class TestTraining:
    def test_training_lowers_nll(self, rng):
        images = np.zeros((64, 4, 4), dtype=np.uint8)
        images[:, :2] = 1
        config = PixelModelConfig(n_layers=2, kernel_size=3, filters=4, image_shape=(4, 4))
        model, history = train_pixel_model(images, config, TrainingConfig(batch_size=16, learning_rate=0.01, epochs=10),
                                           np.random.default_rng(0), np.random.default_rng(1))
        assert history.train_loss[-1] < history.train_loss[0]
        assert -model.log_prob_batch(images[:1])[0] < 16 * np.log(2)

    @pytest.mark.slow
    def test_single_image_is_memorized(self):
        image = np.zeros((1, 8, 8), dtype=np.uint8)
        image[0, 2:6, 3:5] = 1
        config = PixelModelConfig(n_layers=3, kernel_size=3, filters=8, image_shape=(8, 8))
        training = TrainingConfig(batch_size=1, learning_rate=1e-2, epochs=500, max_steps=500)
        model, history = train_pixel_model(image, config, training, np.random.default_rng(0), np.random.default_rng(1))
        assert history.steps == 500
        assert -model.log_prob_batch(image)[0] < 1.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_pixel_model(np.zeros((0, 4, 4)), PixelModelConfig(image_shape=(4, 4)), TrainingConfig(),
                              np.random.default_rng(0), np.random.default_rng(1))

    def test_astype_preserves_log_prob(self, tiny_model, binary_images):
        single = tiny_model.astype(np.float32)
        assert single.params.dtype == np.float32
        assert_allclose(single.log_prob_batch(binary_images), tiny_model.log_prob_batch(binary_images), rtol=1e-4)
