"""
preprocess.py
Downsampling, stochastic binarization and bit-depth quantization.
"""
import numpy as np

from utils.data_model import ImageDataset
from utils.errors import ShapeError


def _check_unit_range(images: np.ndarray, op: str) -> None:
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ValueError(f"{op}: pixel values must lie in [0, 1], got [{images.min()}, {images.max()}]")


def downsample(images: np.ndarray, factor: int = 2) -> np.ndarray:
    """Average pooling over factor x factor blocks"""
    images = np.asarray(images, dtype=np.float64)
    if factor == 1:
        return images
    n, h, w = images.shape
    if h % factor or w % factor:
        raise ShapeError("downsample", "image shape", f"multiples of {factor}", (h, w))
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def binarize(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Each pixel drawn from Bernoulli(grayscale value)"""
    images = np.asarray(images, dtype=np.float64)
    _check_unit_range(images, "binarize")
    return (rng.random(images.shape) < images).astype(np.uint8)


def quantize(images: np.ndarray, bits: int) -> np.ndarray:
    """floor(v * (2^bits - 1) + 0.5) integer levels"""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must lie in [1, 8], got {bits}")
    images = np.asarray(images, dtype=np.float64)
    _check_unit_range(images, "quantize")
    return np.floor(images * (2 ** bits - 1) + 0.5).astype(np.uint8)


def binarize_dataset(dataset: ImageDataset, rng: np.random.Generator, factor: int = 1) -> ImageDataset:
    images = binarize(downsample(dataset.images, factor), rng)
    metadata = {**dataset.metadata, "binarized": True, "downsample": factor}
    return ImageDataset(images, dataset.labels, metadata)
