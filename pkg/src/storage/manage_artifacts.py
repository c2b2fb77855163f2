import hashlib
import logging
import os
import shutil
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from autodiff.params import ParamSet
from autodiff.tensor import Tensor
from embedding.pca import PcaModel
from models.classifier import Classifier, ClassifierConfig
from models.decoder import Decoder, DecoderConfig
from models.pixel_cnn import PixelModel, PixelModelConfig
from storage.formats import (
    CheckpointFile,
    load_checkpoint,
    load_csv,
    load_embeddings,
    save_checkpoint,
    save_csv,
    save_embeddings,
)
from storage.images import png_config_hash
from utils.data_model import EmbeddingSet, ImageDataset
from utils.errors import ConfigHashMismatchError, MissingArtifactError

logger = logging.getLogger(__name__)

RUN_DIR = "./runs/mnist"

# artifact name -> CLI command that produces it
PRODUCERS = {
    "data.ckpt": "train-ar",
    "pixel_model.ckpt": "train-ar",
    "classifier.ckpt": "train-classifier",
    "fid_curve.csv": "evaluate",
}
BUFFER_PREFIX = "buffer:"


def producer_of(name: str) -> str:
    if name in PRODUCERS:
        return PRODUCERS[name]
    if name.startswith("projected_"):
        return "extract-embeddings"
    if name.startswith(("embeddings_", "pca_")):
        return "extract-embeddings / fit-pca"
    if name.startswith("decoder_"):
        return "train-decoder"
    return "the producing stage"


class ArtifactManager:
    """Manage the artifacts of one run directory"""

    def __init__(self, run_dir: str = RUN_DIR):
        """
        Args:
            run_dir: Directory holding every artifact of one experiment
        """
        self.run_dir = Path(run_dir)

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def require(self, name: str) -> Path:
        """
        Path of an artifact that must already exist.

        Raises:
            MissingArtifactError: naming the command that produces it
        """
        path = self.path(name)
        if not path.exists():
            raise MissingArtifactError(path, producer_of(name))
        return path

    def check_run_exists(self) -> bool:
        """True if the run directory exists and is not empty"""
        return self.run_dir.is_dir() and any(self.run_dir.iterdir())

    def delete_run(self) -> None:
        if self.run_dir.exists():
            logger.info(f"Deleting run directory {self.run_dir}")
            shutil.rmtree(self.run_dir)

    def get_run_stats(self) -> dict:
        """Artifact names with their sizes and recorded config hashes"""
        if not self.check_run_exists():
            return {"exists": False, "count": 0}
        artifacts = {}
        for path in sorted(p for p in self.run_dir.rglob("*") if p.is_file() and not p.name.startswith(".")):
            entry: Dict[str, Any] = {"bytes": path.stat().st_size}
            try:
                if path.suffix == ".ckpt":
                    entry["config_hash"] = load_checkpoint(path).config_hash
                elif path.suffix == ".emb":
                    embeddings = load_embeddings(path)
                    entry.update(config_hash=embeddings.header.get("config_hash", ""),
                                 count=len(embeddings), dim=embeddings.dim)
                elif path.suffix == ".csv":
                    table = load_csv(path)
                    entry.update(config_hash=table.attrs["config_hash"], rows=len(table))
                elif path.suffix == ".png":
                    entry["config_hash"] = png_config_hash(path)
            except Exception as exc:
                entry["error"] = str(exc)
            artifacts[str(path.relative_to(self.run_dir))] = entry
        return {"exists": True, "count": len(artifacts), "run_dir": str(self.run_dir), "artifacts": artifacts}

    # -- hash-checked containers -------------------------------------------

    def _verify(self, path: Path, found: str, expected: Optional[str]) -> None:
        if expected is not None and found != expected:
            raise ConfigHashMismatchError(path, expected, found)

    def write_checkpoint(self, name: str, tensors: Dict[str, np.ndarray], config_hash: str,
                         metadata: Optional[dict] = None) -> Path:
        path = self.path(name)
        save_checkpoint(path, CheckpointFile(tensors, config_hash, metadata or {}))
        logger.info(f"Wrote {path}")
        return path

    def read_checkpoint(self, name: str, expected_hash: Optional[str] = None) -> CheckpointFile:
        path = self.require(name)
        checkpoint = load_checkpoint(path)
        self._verify(path, checkpoint.config_hash, expected_hash)
        return checkpoint

    def write_embeddings(self, name: str, embeddings: EmbeddingSet, config_hash: str) -> Path:
        path = self.path(name)
        save_embeddings(path, embeddings, config_hash)
        logger.info(f"Wrote {len(embeddings)} x {embeddings.dim} embeddings to {path}")
        return path

    def read_embeddings(self, name: str, expected_hash: Optional[str] = None) -> EmbeddingSet:
        path = self.require(name)
        embeddings = load_embeddings(path)
        self._verify(path, embeddings.header.get("config_hash", ""), expected_hash)
        return embeddings

    def write_csv(self, name: str, table: pd.DataFrame, config_hash: str) -> Path:
        path = self.path(name)
        save_csv(path, table, config_hash)
        logger.info(f"Wrote {len(table)} rows to {path}")
        return path

    def read_csv(self, name: str, expected_hash: Optional[str] = None) -> pd.DataFrame:
        path = self.require(name)
        table = load_csv(path)
        self._verify(path, table.attrs["config_hash"], expected_hash)
        return table

    def digest(self, name: str) -> str:
        """SHA-256 of an artifact's bytes"""
        return hashlib.sha256(self.require(name).read_bytes()).hexdigest()

    # -- typed artifacts ----------------------------------------------------

    def save_datasets(self, train: ImageDataset, test: ImageDataset, config_hash: str) -> Path:
        tensors = {"train.images": train.images.astype(np.uint8), "test.images": test.images.astype(np.uint8)}
        for split, dataset in (("train", train), ("test", test)):
            if dataset.labels is not None:
                tensors[f"{split}.labels"] = dataset.labels.astype(np.int64)
        return self.write_checkpoint("data.ckpt", tensors, config_hash, {"kind": "datasets"})

    def load_datasets(self, expected_hash: Optional[str] = None) -> Tuple[ImageDataset, ImageDataset]:
        tensors = self.read_checkpoint("data.ckpt", expected_hash).tensors
        return tuple(
            ImageDataset(tensors[f"{split}.images"], tensors.get(f"{split}.labels"), {"split": split})
            for split in ("train", "test")
        )

    @staticmethod
    def _params_from(tensors: Dict[str, np.ndarray], prefix: str = "") -> ParamSet:
        return ParamSet({
            name[len(prefix):]: Tensor(array, requires_grad=not prefix)
            for name, array in tensors.items()
            if name.startswith(prefix) and (prefix or not name.startswith(BUFFER_PREFIX))
        })

    def save_pixel_model(self, model: PixelModel, config_hash: str) -> Path:
        tensors = {name: t.data for name, t in model.params.items()}
        return self.write_checkpoint("pixel_model.ckpt", tensors, config_hash,
                                     {"kind": "pixel_model", "config": model.config.to_dict()})

    def load_pixel_model(self, expected_hash: Optional[str] = None) -> PixelModel:
        return self.pixel_model_from(self.read_checkpoint("pixel_model.ckpt", expected_hash))

    @classmethod
    def pixel_model_from(cls, checkpoint: CheckpointFile) -> PixelModel:
        config = PixelModelConfig.from_dict(checkpoint.metadata["config"])
        return PixelModel(config, cls._params_from(checkpoint.tensors))

    def save_decoder(self, name: str, decoder: Decoder, config_hash: str, metadata: Optional[dict] = None) -> Path:
        tensors = {n: t.data for n, t in decoder.params.items()}
        tensors.update({BUFFER_PREFIX + n: t.data for n, t in decoder.buffers.items()})
        return self.write_checkpoint(name, tensors, config_hash,
                                     {"kind": "decoder", "config": decoder.config.to_dict(), **(metadata or {})})

    def load_decoder(self, name: str, expected_hash: Optional[str] = None) -> Decoder:
        checkpoint = self.read_checkpoint(name, expected_hash)
        config = DecoderConfig.from_dict(checkpoint.metadata["config"])
        return Decoder(config, self._params_from(checkpoint.tensors),
                       self._params_from(checkpoint.tensors, BUFFER_PREFIX))

    def save_classifier(self, classifier: Classifier, config_hash: str, accuracy: Optional[float]) -> Path:
        tensors = {n: t.data for n, t in classifier.params.items()}
        return self.write_checkpoint("classifier.ckpt", tensors, config_hash,
                                     {"kind": "classifier", "config": classifier.config.to_dict(),
                                      "test_accuracy": accuracy})

    def load_classifier(self, expected_hash: Optional[str] = None) -> Classifier:
        checkpoint = self.read_checkpoint("classifier.ckpt", expected_hash)
        config = ClassifierConfig.from_dict(checkpoint.metadata["config"])
        return Classifier(config, self._params_from(checkpoint.tensors))

    def save_pca(self, name: str, pca: PcaModel, config_hash: str) -> Path:
        tensors = {"mean": pca.mean, "components": pca.components, "explained_variance": pca.explained_variance}
        return self.write_checkpoint(name, tensors, config_hash, {"kind": "pca"})

    def load_pca(self, name: str, expected_hash: Optional[str] = None) -> PcaModel:
        t = self.read_checkpoint(name, expected_hash).tensors
        return PcaModel(t["mean"], t["components"], t["explained_variance"])


if __name__ == "__main__":
    manager = ArtifactManager(os.environ.get("FSEB_RUN__DIR", RUN_DIR))
    stats = manager.get_run_stats()
    print("\n" + "=" * 60)
    print(f"Run directory: {stats.get('run_dir', manager.run_dir)}")
    print(f"Artifacts: {stats['count']}")
    for name, entry in stats.get("artifacts", {}).items():
        print(f"  - {name}: {entry}")
    print("=" * 60)
