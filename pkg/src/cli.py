"""
cli.py
`fseb` command line: one subcommand per pipeline stage.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from fisher_pipeline import FisherPipeline
from utils.config import ExperimentConfig
from utils.data_model import EmbeddingSource
from utils.errors import FisherEmbedError

logger = logging.getLogger("fseb")

SOURCES = [s.value for s in (EmbeddingSource.FISHER, EmbeddingSource.ACTIVATION, EmbeddingSource.PIXEL)]


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotenv-style config file (section.key=value)")
    common.add_argument("--run-dir", help="artifact directory (overrides run.dir)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker threads for Fisher scores")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--source", choices=SOURCES, default=EmbeddingSource.FISHER.value)

    projection = argparse.ArgumentParser(add_help=False)
    projection.add_argument("--proj-dim", type=int, help="projection output dim p")
    projection.add_argument("--density", type=float, help="projection density d (default 1/sqrt(n))")
    projection.add_argument("--normalized-projection", action="store_true", default=None,
                            help="scale entries so that E[Px . Px] = x . x")
    projection.add_argument("--standardize", action="store_true", default=None,
                            help="standardize Fisher scores before projecting")

    parser = argparse.ArgumentParser(prog="fseb", description="Fisher score embeddings of a PixelCNN")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-ar", parents=[common], help="binarize MNIST and train the PixelCNN")
    p = sub.add_parser("extract-embeddings", parents=[common, source, projection],
                       help="Fisher score / activation / pixel embeddings")
    p.add_argument("--f64-check", action="store_true", help="finite-difference check of the scores first")
    p.add_argument("--pca-dim", type=int, help="PCA output dim (0 = no PCA)")
    p = sub.add_parser("fit-pca", parents=[common, source], help="PCA of projected embeddings")
    p.add_argument("--pca-dim", type=int)
    sub.add_parser("train-decoder", parents=[common, source], help="train the decoder on embeddings")
    sub.add_parser("train-classifier", parents=[common], help="train the FID feature classifier")
    sub.add_parser("interpolate", parents=[common, source], help="interpolation and reconstruction grids")
    p = sub.add_parser("evaluate", parents=[common], help="FID against alpha")
    p.add_argument("--sources", type=lambda t: [s.strip() for s in t.split(",") if s.strip()],
                   help="comma-separated embedding sources (default run.sources)")
    p.add_argument("--alpha-list", type=_floats, help="comma-separated alphas in [0, 1]")
    p.add_argument("--n", type=int, help="images per alpha dataset")
    p = sub.add_parser("manipulate", parents=[common, source], help="attribute vector, grid and flip rate")
    p.add_argument("--scale", type=float)
    sub.add_parser("report", parents=[common], help="print the FID table and plot the curve")
    p = sub.add_parser("sweep-projection", parents=[common, source, projection],
                       help="reconstruction error over projection dims and densities")
    p.add_argument("--dims", type=_ints)
    p.add_argument("--densities", type=_floats)
    p = sub.add_parser("run-all", parents=[common], help="every stage in order")
    p.add_argument("--f64-check", action="store_true")
    sub.add_parser("explore", parents=[common], help="launch the gradio explorer")
    return parser


def overrides_from(args: argparse.Namespace) -> Dict[str, object]:
    """Config keys set by command-line flags (None values are left out)"""
    values = {
        "run.dir": getattr(args, "run_dir", None),
        "seeds.master": getattr(args, "seed", None),
        "run.threads": getattr(args, "threads", None),
        "projection.dim": getattr(args, "proj_dim", None),
        "projection.density": getattr(args, "density", None),
        "projection.normalized": getattr(args, "normalized_projection", None),
        "projection.standardize": getattr(args, "standardize", None),
        "pca.dim": getattr(args, "pca_dim", None),
        "eval.alphas": getattr(args, "alpha_list", None),
        "eval.n": getattr(args, "n", None),
        "manip.scale": getattr(args, "scale", None),
    }
    sources = getattr(args, "sources", None)
    if sources:
        values["run.sources"] = sources
    return {k: v for k, v in values.items() if v is not None}


def run(args: argparse.Namespace) -> None:
    config = ExperimentConfig.load(args.config, overrides_from(args))
    if args.command == "explore":
        from app import build_app
        build_app(config=config).launch(server_name="0.0.0.0", server_port=7860, share=False, show_error=True)
        return

    pipeline = FisherPipeline(config)
    source = EmbeddingSource(getattr(args, "source", EmbeddingSource.FISHER.value))
    if args.command == "train-ar":
        pipeline.train_ar()
    elif args.command == "extract-embeddings":
        pipeline.extract_embeddings(source, f64_check=args.f64_check)
    elif args.command == "fit-pca":
        pipeline.fit_pca(source)
    elif args.command == "train-decoder":
        pipeline.train_decoder(source)
    elif args.command == "train-classifier":
        pipeline.train_classifier()
    elif args.command == "interpolate":
        pipeline.interpolate(source)
    elif args.command == "evaluate":
        pipeline.evaluate([EmbeddingSource(s) for s in config["run.sources"]])
    elif args.command == "manipulate":
        pipeline.manipulate(source)
    elif args.command == "report":
        pipeline.report()
    elif args.command == "sweep-projection":
        pipeline.sweep_projection(args.dims or config["projection.sweep_dims"],
                                  args.densities or config["projection.sweep_densities"], source)
    elif args.command == "run-all":
        pipeline.run_all(f64_check=args.f64_check)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        run(args)
    except FisherEmbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
