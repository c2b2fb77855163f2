"""
config.py
Experiment configuration: dotenv-format key/value files with dotted section
keys, FSEB_<SECTION>__<KEY> environment overrides and per-stage hashes.
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values

from models.decoder import DecoderConfig
from models.pixel_cnn import PixelModelConfig
from models.training import TrainingConfig
from utils.errors import ConfigError
from utils.seeding import STREAMS, substream, substream_seed

ENV_PREFIX = "FSEB_"

# key -> (kind, default); defaults reproduce the MNIST experiment
SCHEMA: Dict[str, Tuple[str, Any]] = {
    "data.mnist_dir": ("str", "data/mnist"),
    "data.train_size": ("int", 10000),
    "data.test_size": ("int", 10000),
    "data.downsample": ("int", 1),
    "pixel_model.n_layers": ("int", 5),
    "pixel_model.kernel_size": ("int", 7),
    "pixel_model.filters": ("int", 64),
    "pixel_model.output": ("str", "bernoulli"),
    "pixel_model.levels": ("int", 2),
    "train.batch_size": ("int", 128),
    "train.learning_rate": ("float", 1e-3),
    "train.epochs": ("int", 50),
    "train.max_steps": ("opt_int", None),
    "train.beta1": ("float", 0.9),
    "train.beta2": ("float", 0.999),
    "train.eps": ("float", 1e-8),
    "projection.dim": ("int", 1024),
    "projection.density": ("opt_float", 1.0),
    "projection.normalized": ("bool", False),
    "projection.standardize": ("bool", False),
    "projection.buffer_size": ("int", 256),
    "projection.sweep_dims": ("ints", (64, 256, 1024)),
    "projection.sweep_densities": ("floats", (0.001, 0.01, 0.1, 1.0)),
    "pca.dim": ("int", 0),
    "decoder.dense_width": ("int", 1024),
    "decoder.up_channels": ("int", 128),
    "decoder.mid_channels": ("int", 32),
    "decoder.head": ("str", "categorical"),
    "decoder.batch_size": ("int", 128),
    "decoder.learning_rate": ("float", 1e-3),
    "decoder.epochs": ("int", 50),
    "decoder.max_steps": ("opt_int", None),
    "decoder.val_fraction": ("float", 0.1),
    "eval.alphas": ("floats", (0.0, 0.125, 0.25, 0.375, 0.5)),
    "eval.n": ("int", 5000),
    "eval.extractor": ("str", "classifier"),
    "eval.feature_dim": ("int", 64),
    "eval.pca_features": ("int", 32),
    "eval.classifier_epochs": ("int", 5),
    "eval.classifier_min_accuracy": ("float", 0.95),
    "eval.grid_pairs": ("int", 8),
    "manip.positive_label": ("int", 1),
    "manip.scale": ("float", 3.0),
    "manip.grid_samples": ("int", 8),
    "seeds.master": ("int", 0),
    **{f"seeds.{stream}": ("opt_int", None) for stream in STREAMS},
    "run.dir": ("str", "runs/mnist"),
    "run.threads": ("int", 1),
    "run.sources": ("strs", ("fisher", "activation")),
    "run.activation_layer": ("opt_int", None),
}

# Config keys (exact or "section.*") each stage output depends on, upstream included
_DATA = ["data.*", "seeds.master", "seeds.binarize"]
_AR = _DATA + ["pixel_model.*", "train.*", "seeds.init", "seeds.shuffle"]
_EMBED = _AR + ["projection.dim", "projection.density", "projection.normalized", "projection.standardize",
                "seeds.projection", "run.activation_layer"]
_PCA = _EMBED + ["pca.*"]
_DECODER = _PCA + ["decoder.*", "seeds.split"]
_CLASSIFIER = _DATA + ["eval.extractor", "eval.feature_dim", "eval.pca_features", "eval.classifier_epochs",
                       "train.batch_size", "train.learning_rate", "seeds.init", "seeds.shuffle"]
STAGE_KEYS: Dict[str, List[str]] = {
    "data": _DATA,
    "train-ar": _AR,
    "extract-embeddings": _EMBED,
    "fit-pca": _PCA,
    "train-decoder": _DECODER,
    "train-classifier": _CLASSIFIER,
    "interpolate": _DECODER + ["eval.alphas", "eval.grid_pairs", "seeds.sample"],
    "evaluate": _DECODER + _CLASSIFIER + ["eval.*", "seeds.eval_pairs"],
    "manipulate": _DECODER + ["manip.*"],
    "sweep-projection": _AR + ["projection.*", "decoder.*", "seeds.projection", "seeds.split"],
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(key: str, kind: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    text = raw.strip()
    try:
        if kind.startswith("opt_"):
            if text.lower() in {"", "none"}:
                return None
            kind = kind[4:]
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind == "ints":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "floats":
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind == "strs":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse {raw!r} as {kind}") from None


def _canonical(value: Any) -> Any:
    return list(value) if isinstance(value, tuple) else value


class ExperimentConfig:
    """Every hyperparameter of a run, keyed "section.name" """

    def __init__(self, values: Optional[Mapping[str, Any]] = None):
        self._values = {key: default for key, (_, default) in SCHEMA.items()}
        self.update(values or {})

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> "ExperimentConfig":
        """
        Defaults, then the file, then FSEB_* environment variables, then
        explicit overrides (CLI flags).
        """
        config = cls()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            config.update({k: v for k, v in dotenv_values(path).items()})
        environ = os.environ if environ is None else environ
        config.update(cls._from_environ(environ))
        config.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return config

    @staticmethod
    def _from_environ(environ: Mapping[str, str]) -> Dict[str, str]:
        found = {}
        for name, value in environ.items():
            if not name.startswith(ENV_PREFIX) or "__" not in name:
                continue
            section, key = name[len(ENV_PREFIX):].split("__", 1)
            found[f"{section.lower()}.{key.lower()}"] = value
        return found

    def update(self, values: Mapping[str, Any]) -> None:
        for key, raw in values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key '{key}'")
            kind, _ = SCHEMA[key]
            self._values[key] = _parse(key, kind, raw)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def section(self, name: str) -> Dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def to_dict(self) -> Dict[str, Any]:
        return {k: _canonical(v) for k, v in self._values.items()}

    def _stage_keys(self, stage: str) -> Iterable[str]:
        if stage not in STAGE_KEYS:
            raise ConfigError(f"unknown stage '{stage}'")
        patterns = STAGE_KEYS[stage]
        for key in self._values:
            section = key.split(".", 1)[0]
            if key in patterns or f"{section}.*" in patterns:
                yield key

    def stage_hash(self, stage: str) -> str:
        """SHA-256 of the canonical JSON of the keys `stage` depends on"""
        relevant = {key: _canonical(self._values[key]) for key in sorted(self._stage_keys(stage))}
        blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # -- seeds ------------------------------------------------------------

    @property
    def seed_overrides(self) -> Dict[str, int]:
        return {s: self._values[f"seeds.{s}"] for s in STREAMS if self._values[f"seeds.{s}"] is not None}

    def seed(self, stream: str) -> int:
        return substream_seed(self["seeds.master"], stream, self.seed_overrides)

    def rng(self, stream: str):
        return substream(self["seeds.master"], stream, self.seed_overrides)

    # -- typed views ------------------------------------------------------

    @property
    def image_shape(self) -> Tuple[int, int]:
        side = 28 // self["data.downsample"]
        return side, side

    def pixel_model_config(self) -> PixelModelConfig:
        s = self.section("pixel_model")
        return PixelModelConfig(
            n_layers=s["n_layers"], kernel_size=s["kernel_size"], filters=s["filters"],
            image_shape=self.image_shape, output=s["output"], levels=s["levels"],
        )

    def training_config(self) -> TrainingConfig:
        s = self.section("train")
        return TrainingConfig(
            batch_size=s["batch_size"], learning_rate=s["learning_rate"], epochs=s["epochs"],
            beta1=s["beta1"], beta2=s["beta2"], eps=s["eps"], max_steps=s["max_steps"],
        )

    def decoder_training_config(self) -> TrainingConfig:
        s = self.section("decoder")
        return TrainingConfig(
            batch_size=s["batch_size"], learning_rate=s["learning_rate"], epochs=s["epochs"],
            beta1=self["train.beta1"], beta2=self["train.beta2"], eps=self["train.eps"], max_steps=s["max_steps"],
        )

    def classifier_training_config(self) -> TrainingConfig:
        return TrainingConfig(
            batch_size=self["train.batch_size"], learning_rate=self["train.learning_rate"],
            epochs=self["eval.classifier_epochs"],
        )

    def decoder_config(self, input_dim: int) -> DecoderConfig:
        s = self.section("decoder")
        return DecoderConfig(
            input_dim=input_dim, dense_width=s["dense_width"], up_channels=s["up_channels"],
            mid_channels=s["mid_channels"], image_shape=self.image_shape, head=s["head"],
        )