"""
idx.py
Reader for the IDX binary format used by MNIST (optionally gzip-compressed).
"""
import gzip
import logging
import struct
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from utils.data_model import ImageDataset
from utils.errors import FormatError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
UBYTE = 0x08

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path: Union[str, Path], expected_magic: int) -> np.ndarray:
    """
    Parse one IDX file of unsigned bytes.

    Raises:
        FormatError: bad magic, truncated header or payload, trailing bytes
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(path, len(raw), "truncated magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(path, len(raw), f"truncated header, expected {ndim} dimension sizes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected_end = header_end + int(np.prod(dims, dtype=np.int64))
    if len(raw) < expected_end:
        raise FormatError(path, len(raw), f"truncated payload, expected {expected_end} bytes for shape {dims}")
    if len(raw) > expected_end:
        raise FormatError(path, expected_end, f"{len(raw) - expected_end} unexpected trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=expected_end - header_end, offset=header_end).reshape(dims)


def ingest_idx(images_path: Union[str, Path], labels_path: Optional[Union[str, Path]] = None) -> ImageDataset:
    """
    Load IDX images (and labels) as grayscale floats in [0, 1].

    Args:
        images_path: IDX3 image file
        labels_path: Optional IDX1 label file with the same count

    Returns:
        ImageDataset of shape (n, H, W)
    """
    pixels = read_idx(images_path, IMAGES_MAGIC)
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, LABELS_MAGIC).astype(np.int64)
        if len(labels) != len(pixels):
            raise FormatError(
                labels_path, 4, f"label count {len(labels)} does not match image count {len(pixels)}"
            )
    dataset = ImageDataset(
        images=pixels.astype(np.float64) / 255.0,
        labels=labels,
        metadata={"source": str(images_path), "n": len(pixels)},
    )
    logger.info(f"Loaded {len(pixels)} images of {dataset.image_shape} from {images_path}")
    return dataset


def find_split(directory: Union[str, Path], split: str) -> Tuple[Path, Path]:
    """Locate the standard MNIST file pair of a split, with or without .gz"""
    directory = Path(directory)
    if split not in MNIST_FILES:
        raise ValueError(f"unknown split '{split}', expected one of {sorted(MNIST_FILES)}")
    found = []
    for stem in MNIST_FILES[split]:
        candidates = [directory / name for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"),
                                                    stem.replace("-idx", ".idx") + ".gz")]
        match = next((c for c in candidates if c.exists()), None)
        if match is None:
            raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")
        found.append(match)
    return found[0], found[1]


def ingest_mnist(directory: Union[str, Path], split: str = "train") -> ImageDataset:
    images_path, labels_path = find_split(directory, split)
    return ingest_idx(images_path, labels_path)
