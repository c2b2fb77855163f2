"""Checks against the real MNIST files; set FSEB_MNIST_DIR to the directory holding them."""
import os
from pathlib import Path

import numpy as np
import pytest

from fisher_pipeline import FisherPipeline
from ingest.idx import ingest_mnist
from report import peak_ratios
from utils.config import ExperimentConfig

MNIST_DIR = os.environ.get("FSEB_MNIST_DIR")
CI_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "mnist_ci.env"

pytestmark = pytest.mark.skipif(not MNIST_DIR, reason="FSEB_MNIST_DIR is not set")


def test_ingest_shapes():
    train, test = ingest_mnist(MNIST_DIR, "train"), ingest_mnist(MNIST_DIR, "test")
    assert train.images.shape == (60000, 28, 28) and test.images.shape == (10000, 28, 28)
    assert 0.0 <= train.images.min() and train.images.max() <= 1.0
    assert set(np.unique(train.labels)) == set(range(10))


@pytest.mark.slow
def test_fisher_embeddings_interpolate_better(tmp_path):
    config = ExperimentConfig.load(CI_CONFIG, {"data.mnist_dir": MNIST_DIR, "run.dir": str(tmp_path)})
    table = FisherPipeline(config).run_all()
    at_half = table[table["alpha"] == 0.5].set_index("embedding_source")["fid"]
    assert at_half["fisher"] < at_half["activation"]
    ratios = peak_ratios(table)
    assert ratios["fisher"] < ratios["activation"]
    assert ratios["activation"] / ratios["fisher"] >= 2.0


@pytest.mark.slow
def test_reconstruction_improves_with_projection_dim(tmp_path):
    config = ExperimentConfig.load(CI_CONFIG, {"data.mnist_dir": MNIST_DIR, "run.dir": str(tmp_path)})
    pipeline = FisherPipeline(config)
    pipeline.train_ar()
    sweep = pipeline.sweep_projection([1024, 64, 256], [1.0])
    errors = sweep.sort_values("proj_dim")["recon_error"].to_numpy()
    assert list(sweep.sort_values("proj_dim")["proj_dim"]) == [64, 256, 1024]
    assert np.all(np.diff(errors) < 0), errors
