import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from autodiff.gradcheck import gradient_check
from embedding.fisher import fisher_scores, fit_standardizer
from embedding.pca import fit_pca
from embedding.projection import build_projection
from embedding.reduce import reduce, reduce_with_pca, source_dim
from evaluation.features import ClassifierExtractor, FeatureExtractor, PcaExtractor, RawPixelExtractor, \
    train_feature_extractor
from evaluation.fid_curve import feature_stats, fid_curve, split_half_fid
from evaluation.interpolation import draw_pairs, interpolation_grid, reconstruction_grid
from evaluation.manipulation import attribute_flip_rate, attribute_vector, manipulation_grid
from ingest.idx import ingest_mnist
from ingest.preprocess import binarize_dataset
from models.decoder import reconstruction_error, train_decoder
from models.pixel_cnn import train_pixel_model
from report import plot_sweep, render_report
from storage.images import save_grid
from storage.manage_artifacts import ArtifactManager
from utils.config import ExperimentConfig
from utils.data_model import EmbeddingSet, EmbeddingSource, ImageDataset
from utils.errors import ConfigHashMismatchError, FisherEmbedError, MissingArtifactError

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


class ClassAttribute:
    """Digit classifier read as a binary attribute: predicted label == positive label"""

    def __init__(self, classifier, positive_label: int):
        self.classifier = classifier
        self.positive_label = positive_label

    def predict(self, images: np.ndarray) -> np.ndarray:
        return (self.classifier.predict(images) == self.positive_label).astype(np.int64)


class FisherPipeline:
    """
    Staged pipeline over one run directory.

    Binarize -> PixelCNN -> embeddings (Fisher / activation / pixel) -> PCA ->
    decoder -> interpolation and FID curve -> attribute manipulation.

    Every stage verifies the config hash recorded by its upstream artifacts.
    """

    def __init__(self, config: ExperimentConfig, run_dir: Optional[str] = None):
        self.config = config
        self.artifacts = ArtifactManager(run_dir or config["run.dir"])

        print("Initialized Fisher embedding pipeline")
        print(f"Run directory: {self.artifacts.run_dir}")
        print(f"Image shape: {config.image_shape}")

    @staticmethod
    def _banner(title: str) -> None:
        print("\n" + "=" * 60)
        print(title)
        print("=" * 60)

    def _hash(self, stage: str) -> str:
        return self.config.stage_hash(stage)

    # ------------------------------------------------------------------ data

    def prepare_data(self) -> Tuple[ImageDataset, ImageDataset]:
        """Ingest MNIST, take the configured subsets, downsample and binarize once"""
        cfg = self.config
        print(f"\nLoading MNIST from {cfg['data.mnist_dir']}...")
        train = ingest_mnist(cfg["data.mnist_dir"], "train")
        test = ingest_mnist(cfg["data.mnist_dir"], "test")
        if cfg["data.train_size"]:
            train = train.subset(np.arange(min(cfg["data.train_size"], len(train))))
        if cfg["data.test_size"]:
            test = test.subset(np.arange(min(cfg["data.test_size"], len(test))))

        rng = cfg.rng("binarize")
        factor = cfg["data.downsample"]
        train, test = binarize_dataset(train, rng, factor), binarize_dataset(test, rng, factor)
        self.artifacts.save_datasets(train, test, self._hash("data"))
        print(f"Binarized {len(train)} train / {len(test)} test images of {train.image_shape}")
        return train, test

    def datasets(self, create: bool = False) -> Tuple[ImageDataset, ImageDataset]:
        try:
            return self.artifacts.load_datasets(self._hash("data"))
        except (MissingArtifactError, ConfigHashMismatchError):
            if not create:
                raise
        return self.prepare_data()

    # ------------------------------------------------------------ pixel model

    def train_ar(self):
        self._banner("TRAIN PIXELCNN")
        train, test = self.datasets(create=True)
        cfg = self.config
        model, history = train_pixel_model(
            train.images, cfg.pixel_model_config(), cfg.training_config(), cfg.rng("init"), cfg.rng("shuffle")
        )
        self.artifacts.save_pixel_model(model, self._hash("train-ar"))
        held_out = test.images[:1000]
        test_nll = -float(np.mean(model.log_prob_batch(held_out)))
        print(f"Parameters: {model.n_params}")
        print(f"Final train NLL: {history.final_train_loss:.4f} nats/image")
        print(f"Test NLL ({len(held_out)} images): {test_nll:.4f} nats/image")
        return model

    def pixel_model(self):
        return self.artifacts.load_pixel_model(self._hash("train-ar"))

    # ------------------------------------------------------------ embeddings

    def _projection(self, n_in: int, dim: Optional[int] = None, density: Optional[float] = None):
        cfg = self.config
        return build_projection(
            n_in,
            dim or cfg["projection.dim"],
            density if density is not None else cfg["projection.density"],
            seed=cfg.seed("projection"),
            normalized=cfg["projection.normalized"],
        )

    def check_gradients(self, model, image) -> None:
        """Compare tape scores of a float64 copy with finite differences"""
        model64 = model.astype(np.float64)
        result = gradient_check(lambda: model64.log_prob_tensor(image), model64.params,
                                max_per_block=16, rng=self.config.rng("sample"))
        print(f"Gradient check: max relative error {result.max_rel_error:.2e} over {result.n_checked} entries")
        if not result.passed(GRADCHECK_TOLERANCE):
            raise FisherEmbedError(
                f"gradient check failed at {result.worst}: relative error {result.max_rel_error:.2e} "
                f">= {GRADCHECK_TOLERANCE}"
            )

    def extract_embeddings(self, source: EmbeddingSource, f64_check: bool = False) -> EmbeddingSet:
        self._banner(f"EXTRACT EMBEDDINGS - {source.value.upper()}")
        cfg = self.config
        train, _ = self.datasets()
        checkpoint = self.artifacts.read_checkpoint("pixel_model.ckpt", self._hash("train-ar"))
        model = self.artifacts.pixel_model_from(checkpoint)
        if f64_check:
            self.check_gradients(model, train.images[0])

        layer = cfg["run.activation_layer"]
        n_in = int(np.prod(train.image_shape)) if source is EmbeddingSource.PIXEL else source_dim(model, source, layer)
        projection = self._projection(n_in)
        print(f"Projection: {n_in} -> {projection.p_out}, density {projection.density:.4g}, "
              f"{'normalized' if projection.normalized else 'verbatim'} scaling")

        standardizer = None
        if cfg["projection.standardize"] and source is EmbeddingSource.FISHER:
            print("Fitting score standardizer...")
            standardizer = fit_standardizer(fisher_scores(model, train.images, threads=cfg["run.threads"]))

        embeddings = reduce(
            train.images, model, projection, source=source, layer_index=layer, standardizer=standardizer,
            threads=cfg["run.threads"], buffer_size=cfg["projection.buffer_size"],
        )
        embeddings.header["model_hash"] = checkpoint.config_hash
        embeddings.header["model_sha256"] = self.artifacts.digest("pixel_model.ckpt")
        self.artifacts.write_embeddings(f"projected_{source.value}.emb", embeddings, self._hash("extract-embeddings"))
        if not cfg["pca.dim"]:
            self.artifacts.write_embeddings(f"embeddings_{source.value}.emb", embeddings, self._hash("fit-pca"))
        print(f"Embedded {len(embeddings)} images into {embeddings.dim} dims")
        return embeddings

    def fit_pca(self, source: EmbeddingSource) -> EmbeddingSet:
        self._banner(f"FIT PCA - {source.value.upper()}")
        projected = self.artifacts.read_embeddings(f"projected_{source.value}.emb", self._hash("extract-embeddings"))
        dim = self.config["pca.dim"]
        if not dim:
            print("pca.dim = 0: projected embeddings are used as they are")
            self.artifacts.write_embeddings(f"embeddings_{source.value}.emb", projected, self._hash("fit-pca"))
            return projected
        pca = fit_pca(projected.vectors, dim)
        self.artifacts.save_pca(f"pca_{source.value}.ckpt", pca, self._hash("fit-pca"))
        embeddings = reduce_with_pca(projected, pca)
        self.artifacts.write_embeddings(f"embeddings_{source.value}.emb", embeddings, self._hash("fit-pca"))
        print(f"PCA {pca.input_dim} -> {pca.output_dim}, explained variance "
              f"{pca.explained_variance.sum():.4g}")
        return embeddings

    def embeddings(self, source: EmbeddingSource) -> EmbeddingSet:
        return self.artifacts.read_embeddings(f"embeddings_{source.value}.emb", self._hash("fit-pca"))

    # --------------------------------------------------------------- decoder

    def train_decoder(self, source: EmbeddingSource):
        self._banner(f"TRAIN DECODER - {source.value.upper()}")
        cfg = self.config
        train, _ = self.datasets()
        embeddings = self.embeddings(source)
        images = train.images[embeddings.sample_ids]
        decoder, history = train_decoder(
            embeddings.vectors, images, cfg.decoder_config(embeddings.dim), cfg.decoder_training_config(),
            cfg.rng("init"), cfg.rng("shuffle"), cfg.rng("split"), cfg["decoder.val_fraction"],
        )
        val = history.val_loss[-1] if history.val_loss else None
        self.artifacts.save_decoder(f"decoder_{source.value}.ckpt", decoder, self._hash("train-decoder"),
                                    {"final_train_loss": history.final_train_loss, "final_val_loss": val})
        print(f"Final train loss: {history.final_train_loss:.4f} nats/pixel")
        if val is not None:
            print(f"Validation reconstruction error: {val:.4f} nats/pixel")
        return decoder

    def decoder(self, source: EmbeddingSource):
        return self.artifacts.load_decoder(f"decoder_{source.value}.ckpt", self._hash("train-decoder"))

    # ------------------------------------------------------------ classifier

    def train_classifier(self):
        self._banner("TRAIN FEATURE CLASSIFIER")
        cfg = self.config
        train, test = self.datasets(create=True)
        if train.labels is None:
            raise FisherEmbedError("the feature classifier needs labeled training images")
        extractor, accuracy = train_feature_extractor(
            train.images, train.labels, cfg.classifier_training_config(), cfg.rng("init"), cfg.rng("shuffle"),
            test.images, test.labels, cfg["eval.feature_dim"],
        )
        self.artifacts.save_classifier(extractor.classifier, self._hash("train-classifier"), accuracy)
        if accuracy is not None:
            print(f"Test accuracy: {accuracy:.4f}")
        if accuracy is not None and accuracy < cfg["eval.classifier_min_accuracy"]:
            logger.warning(f"classifier accuracy {accuracy:.4f} is below {cfg['eval.classifier_min_accuracy']}; "
                           "FID values will be noisy")
        return extractor

    def feature_extractor(self) -> FeatureExtractor:
        kind = self.config["eval.extractor"]
        if kind == "raw":
            return RawPixelExtractor(self.config.image_shape)
        if kind == "pca":
            train, _ = self.datasets()
            return PcaExtractor.fit(train.images, self.config["eval.pca_features"])
        if kind == "classifier":
            return ClassifierExtractor(self.artifacts.load_classifier(self._hash("train-classifier")))
        raise FisherEmbedError(f"unknown feature extractor '{kind}' (expected raw, pca or classifier)")

    # ----------------------------------------------------------- evaluation

    def interpolate(self, source: EmbeddingSource) -> None:
        self._banner(f"INTERPOLATION GRIDS - {source.value.upper()}")
        cfg = self.config
        train, _ = self.datasets()
        embeddings, decoder = self.embeddings(source), self.decoder(source)
        endpoints = train.images[embeddings.sample_ids]
        pairs = draw_pairs(len(embeddings), cfg["eval.grid_pairs"], cfg.rng("sample"))
        alphas = sorted(set(cfg["eval.alphas"]) | {1.0 - a for a in cfg["eval.alphas"]})
        grid = interpolation_grid(embeddings, decoder, pairs, alphas, endpoints=endpoints)
        path = save_grid(self.artifacts.path(f"grids/interpolation_{source.value}.png"), grid,
                         config_hash=self._hash("interpolate"))
        print(f"Interpolation grid ({len(pairs)} pairs x {len(alphas)} alphas): {path}")
        recon = reconstruction_grid(embeddings, decoder, endpoints, pairs[:, 0])
        path = save_grid(self.artifacts.path(f"grids/reconstruction_{source.value}.png"), recon,
                         config_hash=self._hash("interpolate"))
        print(f"Reconstruction grid: {path}")

    def evaluate(self, sources: Sequence[EmbeddingSource]) -> pd.DataFrame:
        self._banner("EVALUATE FID CURVES")
        cfg = self.config
        _, test = self.datasets()
        extractor = self.feature_extractor()
        true_stats = feature_stats(test.images, extractor)
        baseline = split_half_fid(test.images, extractor, cfg.rng("eval_pairs"))
        print(f"Split-half baseline FID on {len(test)} test images: {baseline:.4f}")

        curves = []
        for source in sources:
            curves.append(fid_curve(
                self.embeddings(source), self.decoder(source), test.images, extractor,
                alphas=cfg["eval.alphas"], n=cfg["eval.n"], seed=cfg.seed("eval_pairs"),
                decoder_id=f"decoder_{source.value}", true_stats=true_stats,
            ))
        table = pd.concat(curves, ignore_index=True)
        path = self.artifacts.write_csv("fid_curve.csv", table, self._hash("evaluate"))
        print(f"FID curve written to {path}")
        print(render_report(table, self.artifacts.path("fid_curve.png"), self._hash("evaluate")))
        return table

    def manipulate(self, source: EmbeddingSource) -> float:
        self._banner(f"ATTRIBUTE MANIPULATION - {source.value.upper()}")
        cfg = self.config
        train, _ = self.datasets()
        if train.labels is None:
            raise FisherEmbedError("attribute manipulation needs labeled training images")
        embeddings, decoder = self.embeddings(source), self.decoder(source)
        label = cfg["manip.positive_label"]
        has_attribute = (train.labels[embeddings.sample_ids] == label).astype(np.int64)
        attribute = attribute_vector(embeddings, has_attribute, f"digit_{label}")

        delta = EmbeddingSet(attribute.delta[None].astype(np.float32), np.zeros(1, dtype=np.int64),
                             EmbeddingSource.ATTRIBUTE,
                             {"name": attribute.name, "n_pos": attribute.n_pos, "n_neg": attribute.n_neg,
                              "embedding_source": source.value})
        self.artifacts.write_embeddings(f"attribute_{source.value}.emb", delta, self._hash("manipulate"))

        scale = cfg["manip.scale"]
        negatives = np.flatnonzero(has_attribute == 0)[:cfg["manip.grid_samples"]]
        grid = manipulation_grid(decoder, embeddings, attribute, negatives, (-scale, 0.0, scale))
        path = save_grid(self.artifacts.path(f"grids/manipulation_{source.value}.png"), grid,
                         config_hash=self._hash("manipulate"))
        print(f"Manipulation grid (scales -{scale:g}, 0, +{scale:g}): {path}")

        flip_rate = float("nan")
        if self.artifacts.exists("classifier.ckpt"):
            predictor = ClassAttribute(self.artifacts.load_classifier(self._hash("train-classifier")), label)
            flip_rate = attribute_flip_rate(decoder, predictor, embeddings, has_attribute, attribute, scale)
            print(f"Classifier flip rate at scale {scale:g}: {flip_rate:.3f}")
        return flip_rate

    def report(self) -> str:
        self._banner("REPORT")
        curve = self.artifacts.read_csv("fid_curve.csv", self._hash("evaluate"))
        text = render_report(curve, self.artifacts.path("fid_curve.png"), self._hash("evaluate"))
        print(text)
        return text

    # ---------------------------------------------------------------- sweep

    def sweep_projection(self, dims: Sequence[int], densities: Sequence[float],
                         source: EmbeddingSource = EmbeddingSource.FISHER) -> pd.DataFrame:
        """Decoder reconstruction error over a grid of projection dims and densities"""
        self._banner(f"PROJECTION SWEEP - {source.value.upper()}")
        cfg = self.config
        train, _ = self.datasets()
        model = self.pixel_model()
        layer = cfg["run.activation_layer"]
        n_in = int(np.prod(train.image_shape)) if source is EmbeddingSource.PIXEL else source_dim(model, source, layer)
        rows = []
        for dim in dims:
            for density in densities:
                projection = self._projection(n_in, dim, density)
                embeddings = reduce(train.images, model, projection, source=source, layer_index=layer,
                                    threads=cfg["run.threads"], buffer_size=cfg["projection.buffer_size"])
                images = train.images[embeddings.sample_ids]
                decoder, history = train_decoder(
                    embeddings.vectors, images, cfg.decoder_config(embeddings.dim), cfg.decoder_training_config(),
                    cfg.rng("init"), cfg.rng("shuffle"), cfg.rng("split"), cfg["decoder.val_fraction"],
                )
                error = history.val_loss[-1] if history.val_loss else reconstruction_error(
                    decoder, embeddings.vectors, images)
                print(f"  dim {dim:>5} density {density:<6g} reconstruction error {error:.4f}")
                rows.append({"embedding_source": source.value, "proj_dim": dim, "density": density,
                             "recon_error": error})
        table = pd.DataFrame(rows)
        self.artifacts.write_csv("sweep_projection.csv", table, self._hash("sweep-projection"))
        plot_sweep(table, self.artifacts.path("sweep_projection.png"), self._hash("sweep-projection"))
        print(f"Sweep written to {self.artifacts.path('sweep_projection.csv')}")
        return table

    # ------------------------------------------------------------------ all

    def run_all(self, f64_check: bool = False) -> pd.DataFrame:
        sources: List[EmbeddingSource] = [EmbeddingSource(s) for s in self.config["run.sources"]]
        self._banner("FISHER EMBEDDING PIPELINE - FULL RUN")
        self.train_ar()
        for source in sources:
            self.extract_embeddings(source, f64_check=f64_check)
            self.fit_pca(source)
            self.train_decoder(source)
            self.interpolate(source)
        if self.config["eval.extractor"] == "classifier":
            self.train_classifier()
        table = self.evaluate(sources)
        self.manipulate(sources[0])

        self._banner("PIPELINE COMPLETE")
        print(f"Sources: {', '.join(s.value for s in sources)}")
        print(f"Artifacts: {self.artifacts.get_run_stats()['count']} files in {self.artifacts.run_dir}")
        print("=" * 60)
        return table


def run_pipeline(config_path: Optional[str] = None) -> pd.DataFrame:
    """Run every stage with the configuration at `config_path` (defaults otherwise)"""
    pipeline = FisherPipeline(ExperimentConfig.load(config_path))
    return pipeline.run_all()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    run_pipeline()
