import numpy as np
import pytest

from evaluation.frechet import GaussianStats, frechet_distance, gaussian_stats
from utils.errors import ShapeError


def stats(mean, cov, n=100):
    return GaussianStats(np.atleast_1d(np.asarray(mean, dtype=float)), np.atleast_2d(np.asarray(cov, dtype=float)), n)


class TestClosedForms:
    @pytest.mark.parametrize("m1,s1,m2,s2", [(0, 1, 0, 1), (1, 2, -1, 0.5), (3, 0.1, 3, 4)])
    def test_one_dimensional(self, m1, s1, m2, s2):
        distance = frechet_distance(stats(m1, s1 ** 2), stats(m2, s2 ** 2))
        assert distance == pytest.approx((m1 - m2) ** 2 + (s1 - s2) ** 2, abs=1e-8)

    def test_commuting_covariances(self):
        d1, d2 = np.array([1.0, 4.0, 9.0]), np.array([4.0, 1.0, 0.25])
        distance = frechet_distance(stats(np.zeros(3), np.diag(d1)), stats(np.ones(3), np.diag(d2)))
        expected = 3 + np.sum((np.sqrt(d1) - np.sqrt(d2)) ** 2)
        assert distance == pytest.approx(expected, abs=1e-8)

    def test_symmetric(self, rng):
        a, b = gaussian_stats(rng.normal(size=(50, 4))), gaussian_stats(rng.normal(1, 2, size=(60, 4)))
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-8)


class TestSamples:
    def test_same_set_is_zero(self, rng):
        s = gaussian_stats(rng.normal(size=(200, 5)))
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-8)

    def test_grows_with_noise(self, rng):
        base = rng.normal(size=(500, 4))
        reference = gaussian_stats(base)
        distances = [frechet_distance(reference, gaussian_stats(base + rng.normal(scale=s, size=base.shape)))
                     for s in (0.1, 0.5, 1.0, 2.0)]
        assert all(a < b for a, b in zip(distances, distances[1:]))

    def test_singular_covariance_is_regularized(self, rng):
        x = rng.normal(size=(3, 10))
        distance = frechet_distance(gaussian_stats(x), gaussian_stats(x + 1.0))
        assert distance == pytest.approx(10.0, rel=1e-3)

    def test_unbiased_covariance(self, rng):
        x = rng.normal(size=(20, 3))
        s = gaussian_stats(x)
        np.testing.assert_allclose(s.cov, np.cov(x, rowvar=False))
        assert s.n == 20

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            frechet_distance(gaussian_stats(rng.normal(size=(10, 3))), gaussian_stats(rng.normal(size=(10, 4))))

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            gaussian_stats(np.zeros((1, 3)))
