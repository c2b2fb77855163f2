import threading
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from conftest import tiny_pixel_model
from embedding import fisher as fisher_module
from embedding.fisher import (
    FisherScore,
    ScoreStandardizer,
    fisher_gram,
    fisher_kernel,
    fisher_score,
    fisher_scores,
    fit_standardizer,
)
from test_pixel_cnn import all_binary_images
from utils.errors import NonFiniteError, ShapeError


def head_bias_slice(model):
    start, stop = model.params.offsets()["head.bias"]
    return slice(start, stop)


class TestScore:
    def test_head_bias_score_is_residual(self, tiny_model, binary_images):
        image = binary_images[0]
        logits = tiny_model.conditional_logits(image)[0, 0]
        expected = np.sum(image - expit(logits))
        score = fisher_score(tiny_model, image)
        assert score.values[head_bias_slice(tiny_model)][0] == pytest.approx(expected, rel=1e-10)

    def test_score_matches_finite_differences(self, tiny_model, binary_images):
        image = binary_images[1]
        score = fisher_score(tiny_model, image, sample_id=7).values
        assert len(score) == tiny_model.params.n_params
        offsets = tiny_model.params.offsets()
        h = 1e-6
        for name, tensor in tiny_model.params.items():
            start, _ = offsets[name]
            flat = tensor.data.reshape(-1)
            for k in range(min(3, flat.size)):
                original = flat[k]
                flat[k] = original + h
                up = tiny_model.log_prob(image)
                flat[k] = original - h
                down = tiny_model.log_prob(image)
                flat[k] = original
                assert score[start + k] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8), name

    def test_expected_score_is_zero(self, rng):
        model = tiny_pixel_model(rng, image_shape=(2, 2))
        images = all_binary_images(2, 2)
        weights = np.exp(model.log_prob_batch(images))
        total = sum(w * fisher_score(model, x).values for w, x in zip(weights, images))
        assert_allclose(total, 0.0, atol=1e-10)

    def test_non_finite_score_rejected(self):
        with pytest.raises(NonFiniteError):
            FisherScore(np.array([1.0, np.nan]), sample_id=3)

    def test_score_must_be_flat(self):
        with pytest.raises(ShapeError):
            FisherScore(np.zeros((2, 2)))

    @pytest.mark.slow
    def test_sampled_mean_within_standard_error(self, rng):
        model = tiny_pixel_model(rng, image_shape=(4, 4))
        drawn = model.sample(2000, np.random.default_rng(9))
        scores = np.stack([s.values for s in fisher_scores(model, drawn)])
        mean = scores.mean(axis=0)
        se = scores.std(axis=0) / np.sqrt(len(scores))
        active = se > 1e-12
        assert np.all(np.abs(mean[active]) < 4 * se[active] + 1e-9)


class TestBatch:
    def test_order_and_ids_are_kept(self, tiny_model, binary_images):
        ids = [10 + i for i in range(len(binary_images))]
        scores = list(fisher_scores(tiny_model, binary_images, sample_ids=ids))
        assert [s.sample_id for s in scores] == ids
        assert_allclose(scores[4].values, fisher_score(tiny_model, binary_images[4]).values)

    def test_threads_do_not_change_results(self, tiny_model, binary_images):
        serial = [s.values for s in fisher_scores(tiny_model, binary_images, threads=1)]
        threaded = [s.values for s in fisher_scores(tiny_model, binary_images, threads=3)]
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a, b)

    def test_threaded_scoring_waits_for_the_reader(self, monkeypatch):
        calls, lock = [], threading.Lock()

        def counting_score(model, image, sample_id=0):
            with lock:
                calls.append(sample_id)
            return FisherScore(np.full(3, float(sample_id)), sample_id)

        monkeypatch.setattr(fisher_module, "fisher_score", counting_score)
        images = np.zeros((200, 2, 2))
        stream = fisher_scores(None, images, threads=2)
        assert next(stream).sample_id == 0
        time.sleep(0.2)
        assert len(calls) <= 4
        rest = list(stream)
        assert [s.sample_id for s in rest] == list(range(1, 200))
        assert sorted(calls) == list(range(200))

    def test_pending_window_is_configurable(self, monkeypatch):
        calls = []
        monkeypatch.setattr(fisher_module, "fisher_score",
                            lambda model, image, sample_id=0: calls.append(sample_id) or FisherScore(np.zeros(1), sample_id))
        stream = fisher_scores(None, np.zeros((50, 2, 2)), threads=3, max_pending=1)
        next(stream)
        time.sleep(0.1)
        assert len(calls) == 1
        stream.close()


class TestStandardizer:
    def test_mean_and_population_std(self, rng):
        scores = rng.normal(2.0, 3.0, size=(50, 4))
        std = fit_standardizer(iter(scores))
        assert std.n == 50
        assert_allclose(std.mean, scores.mean(axis=0))
        assert_allclose(std.std, scores.std(axis=0))
        standardized = np.stack([std.standardize(s) for s in scores])
        assert_allclose(standardized.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(standardized.std(axis=0), 1.0)

    def test_constant_dimension_is_floored(self):
        scores = np.array([[1.0, 0.5], [3.0, 0.5], [5.0, 0.5]])
        std = fit_standardizer(scores, eps=1e-6)
        assert std.std[1] == 1e-6
        assert std.standardize(np.array([1.0, 0.5]))[1] == 0.0

    def test_accepts_fisher_scores(self, tiny_model, binary_images):
        std = fit_standardizer(fisher_scores(tiny_model, binary_images))
        assert std.dim == tiny_model.params.n_params

    @pytest.mark.parametrize("n", [0, 1])
    def test_needs_two_scores(self, n):
        with pytest.raises(ValueError):
            fit_standardizer(np.ones((n, 3)))

    def test_mismatched_dimensions(self):
        with pytest.raises(ShapeError):
            fit_standardizer([np.zeros(3), np.zeros(4)])
        with pytest.raises(ShapeError):
            ScoreStandardizer(np.zeros(3), np.ones(2))


class TestKernel:
    def test_kernel_is_dot_of_standardized_scores(self, rng):
        std = ScoreStandardizer(np.array([1.0, -1.0]), np.array([2.0, 0.5]))
        a, b = np.array([3.0, 0.0]), np.array([1.0, -2.0])
        assert fisher_kernel(std, a, b) == pytest.approx(1.0 * 0.0 + 2.0 * -2.0)
        assert fisher_kernel(std, a, b) == fisher_kernel(std, b, a)

    def test_gram_is_symmetric_positive_semidefinite(self, tiny_model, binary_images):
        scores = list(fisher_scores(tiny_model, binary_images))
        std = fit_standardizer(scores)
        gram = fisher_gram(std, scores)
        np.testing.assert_array_equal(gram, gram.T)
        assert np.linalg.eigvalsh(gram).min() > -1e-8 * np.abs(gram).max()
        assert gram[2, 5] == pytest.approx(fisher_kernel(std, scores[2], scores[5]))
