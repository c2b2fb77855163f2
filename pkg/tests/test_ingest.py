import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import write_idx
from ingest.idx import IMAGES_MAGIC, LABELS_MAGIC, find_split, ingest_idx, ingest_mnist, read_idx
from ingest.preprocess import binarize, binarize_dataset, downsample, quantize
from ingest.synthetic import bar_mask, planted_images
from utils.data_model import ImageDataset
from utils.errors import FormatError, ShapeError


class TestIdx:
    def test_reads_images(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
        path = write_idx(tmp_path / "images", pixels)
        np.testing.assert_array_equal(read_idx(path, IMAGES_MAGIC), pixels)

    def test_reads_gzip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(2, 2, 2), dtype=np.uint8)
        path = write_idx(tmp_path / "images.gz", pixels, compress=True)
        np.testing.assert_array_equal(read_idx(path, IMAGES_MAGIC), pixels)

    def test_bad_magic(self, tmp_path):
        path = write_idx(tmp_path / "labels", np.zeros(3))
        with pytest.raises(FormatError) as info:
            read_idx(path, IMAGES_MAGIC)
        assert info.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = write_idx(tmp_path / "images", np.zeros((2, 3, 3)))
        raw = path.read_bytes()[:-5]
        path.write_bytes(raw)
        with pytest.raises(FormatError) as info:
            read_idx(path, IMAGES_MAGIC)
        assert info.value.offset == len(raw)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "images"
        path.write_bytes(write_idx(tmp_path / "full", np.zeros((2, 3, 3))).read_bytes()[:9])
        with pytest.raises(FormatError) as info:
            read_idx(path, IMAGES_MAGIC)
        assert info.value.offset == 9

    def test_trailing_bytes(self, tmp_path):
        path = write_idx(tmp_path / "labels", np.arange(4))
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(FormatError) as info:
            read_idx(path, LABELS_MAGIC)
        assert info.value.offset == 8 + 4
        assert "trailing" in str(info.value)


class TestIngest:
    def test_scales_to_unit_range(self, tmp_path):
        images = write_idx(tmp_path / "images", np.array([[[0, 255], [51, 102]]]))
        labels = write_idx(tmp_path / "labels", np.array([7]))
        dataset = ingest_idx(images, labels)
        assert_allclose(dataset.images[0], [[0.0, 1.0], [0.2, 0.4]])
        np.testing.assert_array_equal(dataset.labels, [7])

    def test_label_count_mismatch(self, tmp_path):
        images = write_idx(tmp_path / "images", np.zeros((3, 2, 2)))
        labels = write_idx(tmp_path / "labels", np.zeros(2))
        with pytest.raises(FormatError):
            ingest_idx(images, labels)

    def test_mnist_directory(self, fake_mnist):
        train = ingest_mnist(fake_mnist, "train")
        test = ingest_mnist(fake_mnist, "test")
        assert train.images.shape == (60, 28, 28) and len(test) == 30
        np.testing.assert_array_equal(train.labels[:12], np.arange(12) % 10)

    def test_missing_split(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            find_split(tmp_path, "train")
        with pytest.raises(ValueError):
            find_split(tmp_path, "validation")


class TestPreprocess:
    def test_downsample_averages_blocks(self):
        images = np.arange(16, dtype=float).reshape(1, 4, 4) / 16
        assert_allclose(downsample(images, 2)[0], np.array([[2.5, 4.5], [10.5, 12.5]]) / 16)
        np.testing.assert_array_equal(downsample(images, 1), images)
        with pytest.raises(ShapeError):
            downsample(np.zeros((1, 5, 5)), 2)

    def test_binarize_is_bernoulli(self, rng):
        images = np.full((200, 10, 10), 0.3)
        images[:, 0, 0] = 0.0
        images[:, 0, 1] = 1.0
        binary = binarize(images, rng)
        assert binary.dtype == np.uint8
        assert binary.mean() == pytest.approx(0.3, abs=0.02)
        assert binary[:, 0, 0].max() == 0 and binary[:, 0, 1].min() == 1

    def test_binarize_is_seeded(self):
        images = np.random.default_rng(0).random((5, 4, 4))
        np.testing.assert_array_equal(binarize(images, np.random.default_rng(8)),
                                      binarize(images, np.random.default_rng(8)))

    def test_binarize_rejects_out_of_range(self, rng):
        with pytest.raises(ValueError):
            binarize(np.full((1, 2, 2), 1.5), rng)

    @pytest.mark.parametrize("bits,expected", [(1, [0, 0, 1, 1]), (2, [0, 1, 2, 3]), (8, [0, 64, 191, 255])])
    def test_quantize_levels(self, bits, expected):
        np.testing.assert_array_equal(quantize(np.array([0.0, 0.25, 0.75, 1.0]), bits), expected)

    @pytest.mark.parametrize("bits", [0, 9])
    def test_quantize_bit_range(self, bits):
        with pytest.raises(ValueError):
            quantize(np.zeros(2), bits)

    def test_binarize_dataset_keeps_labels(self, rng):
        dataset = ImageDataset(rng.random((6, 4, 4)), np.arange(6))
        out = binarize_dataset(dataset, rng, factor=2)
        assert out.images.shape == (6, 2, 2)
        assert out.metadata["downsample"] == 2
        np.testing.assert_array_equal(out.labels, np.arange(6))


class TestPlanted:
    def test_bar_marks_positives(self, rng):
        data = planted_images(100, rng, image_shape=(6, 6))
        bar = bar_mask((6, 6))
        on_bar = data.images[:, bar].all(axis=1)
        off_bar = data.images[:, bar].any(axis=1)
        np.testing.assert_array_equal(on_bar, data.labels.astype(bool))
        np.testing.assert_array_equal(off_bar, data.labels.astype(bool))
