import logging
import os
from typing import Optional

import gradio as gr
import numpy as np
from dotenv import load_dotenv

from evaluation.interpolation import interpolate
from evaluation.manipulation import apply_attribute
from storage.images import to_image
from storage.manage_artifacts import ArtifactManager
from utils.config import ExperimentConfig
from utils.data_model import EmbeddingSource

logger = logging.getLogger(__name__)

STRIP_ALPHAS = np.linspace(0.0, 1.0, 9)


class Explorer:
    """Decoded interpolations and attribute edits over one finished run"""

    def __init__(self, run_dir: str, config: ExperimentConfig):
        self.artifacts = ArtifactManager(run_dir)
        self.config = config
        self.sources = [s for s in config["run.sources"]
                        if self.artifacts.exists(f"embeddings_{s}.emb") and self.artifacts.exists(f"decoder_{s}.ckpt")]
        self._cache = {}
        print(f"Explorer over {run_dir}: sources {', '.join(self.sources) or 'none'}")

    def load(self, source: str):
        if source not in self._cache:
            print(f"loading {source} embeddings and decoder...")
            embeddings = self.artifacts.read_embeddings(f"embeddings_{source}.emb")
            decoder = self.artifacts.load_decoder(f"decoder_{source}.ckpt")
            attribute = None
            if self.artifacts.exists(f"attribute_{source}.emb"):
                attribute = self.artifacts.read_embeddings(f"attribute_{source}.emb").vectors[0].astype(np.float64)
            self._cache[source] = (embeddings, decoder, attribute)
        return self._cache[source]

    def interpolation_strip(self, source: str, first: int, second: int, alpha: float):
        """
        Returns:
            strip: decoded images for alphas 0..1
            single: decoded image at the chosen alpha
            info: text summary
        """
        embeddings, decoder, _ = self.load(source)
        n = len(embeddings)
        first, second = int(first), int(second)
        if not (0 <= first < n and 0 <= second < n):
            raise gr.Error(f"sample indices must lie in [0, {n})")
        z1, z2 = embeddings.vectors[first].astype(np.float64), embeddings.vectors[second].astype(np.float64)
        strip = decoder.mode_image(np.stack([interpolate(z1, z2, a) for a in STRIP_ALPHAS]))
        single = decoder.mode_image(interpolate(z1, z2, float(alpha))[None])
        info = (f"source: {source}\nsamples: {embeddings.sample_ids[first]} -> {embeddings.sample_ids[second]}\n"
                f"alpha: {alpha:.3f}\n|z1 - z2|: {np.linalg.norm(z1 - z2):.4f}")
        return to_image(strip[None], scale=3), to_image(single, scale=8), info

    def manipulation(self, source: str, index: int, scale: float):
        embeddings, decoder, attribute = self.load(source)
        if attribute is None:
            raise gr.Error(f"no attribute vector for {source}; run `fseb manipulate --source {source}` first")
        index = int(index)
        if not 0 <= index < len(embeddings):
            raise gr.Error(f"sample index must lie in [0, {len(embeddings)})")
        z = embeddings.vectors[index].astype(np.float64)
        images = decoder.mode_image(np.stack([z, apply_attribute(z, attribute, float(scale))]))
        return to_image(images[None], scale=6)


def build_app(run_dir: Optional[str] = None, config: Optional[ExperimentConfig] = None) -> gr.Blocks:
    config = config or ExperimentConfig.load(os.environ.get("FSEB_CONFIG"))
    explorer = Explorer(run_dir or config["run.dir"], config)
    stats = explorer.artifacts.get_run_stats()
    default_source = explorer.sources[0] if explorer.sources else EmbeddingSource.FISHER.value

    with gr.Blocks(title="Fisher Score Embeddings", theme=gr.themes.Default()) as demo:
        gr.Markdown(
            f"""
            # Fisher Score Embeddings

            **Run:** `{stats.get('run_dir', explorer.artifacts.run_dir)}`

            **Artifacts:** {stats.get('count', 0)} files

            **Sources:** {', '.join(explorer.sources) or 'none trained yet'}
            """
        )
        gr.Markdown("---")

        with gr.Tab("Interpolation"):
            with gr.Row():
                with gr.Column(scale=1):
                    source_input = gr.Dropdown(choices=explorer.sources, value=default_source, label="Embedding source")
                    first_input = gr.Number(value=0, precision=0, label="First sample")
                    second_input = gr.Number(value=1, precision=0, label="Second sample")
                    alpha_slider = gr.Slider(minimum=0.0, maximum=1.0, value=0.5, step=0.05, label="Mixing coefficient α")
                    interpolate_btn = gr.Button("Decode", variant="primary")
                with gr.Column(scale=2):
                    strip_output = gr.Image(label="α = 0 … 1", type="pil")
                    single_output = gr.Image(label="Decoded at α", type="pil")
                    info_output = gr.Textbox(label="Details", lines=4)
            interpolate_btn.click(
                fn=explorer.interpolation_strip,
                inputs=[source_input, first_input, second_input, alpha_slider],
                outputs=[strip_output, single_output, info_output],
            )

        with gr.Tab("Attribute manipulation"):
            with gr.Row():
                with gr.Column(scale=1):
                    manip_source = gr.Dropdown(choices=explorer.sources, value=default_source, label="Embedding source")
                    index_input = gr.Number(value=0, precision=0, label="Sample")
                    scale_slider = gr.Slider(minimum=-6.0, maximum=6.0, value=config["manip.scale"], step=0.5,
                                             label="Scale")
                    manip_btn = gr.Button("Apply", variant="primary")
                with gr.Column(scale=2):
                    manip_output = gr.Image(label="Original | shifted", type="pil")
            manip_btn.click(fn=explorer.manipulation, inputs=[manip_source, index_input, scale_slider],
                            outputs=[manip_output])
    return demo


if __name__ == "__main__":
    load_dotenv()
    demo = build_app()
    demo.launch(
        server_name="0.0.0.0",
        server_port=7860,
        share=False,
        show_error=True
    )
