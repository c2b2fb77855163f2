import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from autodiff.params import ParamSet
from models.decoder import Decoder, DecoderConfig
from models.pixel_cnn import PixelModel, PixelModelConfig


def randomize(params: ParamSet, rng: np.random.Generator, suffixes=(".bias",), scale: float = 0.1) -> None:
    """Overwrite the blocks whose name ends with one of `suffixes` with small random values"""
    for name, tensor in params.items():
        if name.endswith(tuple(suffixes)):
            tensor.data[...] = rng.normal(0.0, scale, size=tensor.shape)


def tiny_pixel_model(rng: np.random.Generator, image_shape=(4, 4), n_layers: int = 2, filters: int = 4,
                     kernel_size: int = 3, dtype: str = "float64") -> PixelModel:
    config = PixelModelConfig(n_layers=n_layers, kernel_size=kernel_size, filters=filters,
                              image_shape=image_shape, dtype=dtype)
    model = PixelModel.initialize(config, rng)
    randomize(model.params, rng)
    return model


def tiny_decoder_config(**overrides) -> DecoderConfig:
    values = dict(input_dim=6, dense_width=8, up_channels=4, mid_channels=3, image_shape=(4, 4), dtype="float64")
    values.update(overrides)
    return DecoderConfig(**values)


def write_idx(path: Path, array: np.ndarray, compress: bool = False) -> Path:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    raw = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    if compress:
        raw = gzip.compress(raw)
    path.write_bytes(raw)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model(rng):
    """2-layer 4x4 Bernoulli PixelCNN in float64 with non-zero biases"""
    return tiny_pixel_model(rng)


@pytest.fixture
def tiny_decoder(rng):
    """4x4 decoder with a random (non-zero) head, float64"""
    decoder = Decoder.initialize(tiny_decoder_config(), rng)
    randomize(decoder.params, rng, suffixes=(".bias", "head.weight", ".beta"), scale=0.3)
    return decoder


@pytest.fixture
def binary_images(rng):
    return (rng.random((12, 4, 4)) < 0.4).astype(np.uint8)


@pytest.fixture
def fake_mnist(tmp_path, rng):
    """Directory with tiny MNIST-named IDX files: 60 train / 30 test 28x28 images"""
    directory = tmp_path / "mnist"
    directory.mkdir()
    for split, n in (("train", 60), ("test", 30)):
        images = (rng.random((n, 28, 28)) * 255).astype(np.uint8)
        labels = (np.arange(n) % 10).astype(np.uint8)
        prefix = "train" if split == "train" else "t10k"
        write_idx(directory / f"{prefix}-images-idx3-ubyte", images)
        write_idx(directory / f"{prefix}-labels-idx1-ubyte", labels)
    return directory
