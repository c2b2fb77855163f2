"""
pixel_cnn.py
Masked-convolution PixelCNN with exact log-likelihood, raster-scan sampling
and intermediate-activation extraction.
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit, softmax

from autodiff import ops
from autodiff.params import ParamSet
from autodiff.tensor import Tensor
from models.training import TrainingConfig, TrainingHistory, fit
from utils.errors import ShapeError

logger = logging.getLogger(__name__)


class MaskKind(Enum):
    """A hides the centre tap, B keeps it"""
    A = "A"
    B = "B"


class OutputKind(Enum):
    BERNOULLI = "bernoulli"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class MaskSpec:
    kind: MaskKind
    kernel_size: int
    in_channels: int = 1
    out_channels: int = 1


def build_mask(spec: MaskSpec) -> Tensor:
    """
    Binary kernel mask preserving raster order.

    Rows above the centre are all ones; on the centre row only taps strictly
    left of centre are ones, plus the centre itself for kind B.

    Returns:
        Tensor (out_channels, in_channels, k, k) of 0/1
    """
    k = spec.kernel_size
    if k < 1 or k % 2 == 0:
        raise ShapeError("build_mask", "kernel_size", "odd", k)
    centre = k // 2
    pattern = np.zeros((k, k))
    pattern[:centre, :] = 1
    pattern[centre, :centre] = 1
    if spec.kind is MaskKind.B:
        pattern[centre, centre] = 1
    return Tensor(np.broadcast_to(pattern, (spec.out_channels, spec.in_channels, k, k)).copy())


@dataclass
class PixelModelConfig:
    """Defaults are the MNIST architecture: 5 masked layers, kernel 7, padding 3, 64 filters"""
    n_layers: int = 5
    kernel_size: int = 7
    padding: Optional[int] = None
    filters: int = 64
    image_shape: Tuple[int, int] = (28, 28)
    output: OutputKind = OutputKind.BERNOULLI
    levels: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        self.output = OutputKind(self.output)
        self.image_shape = tuple(int(v) for v in self.image_shape)
        if self.kernel_size % 2 == 0:
            raise ShapeError("PixelModelConfig", "kernel_size", "odd", self.kernel_size)
        same = (self.kernel_size - 1) // 2
        if self.padding is None:
            self.padding = same
        elif self.padding != same:
            raise ValueError(f"padding must be (kernel_size - 1) / 2 = {same} to preserve spatial size")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.output is OutputKind.BERNOULLI:
            self.levels = 2
        elif self.levels < 2:
            raise ValueError("categorical output needs at least 2 levels")

    @property
    def out_channels(self) -> int:
        return 1 if self.output is OutputKind.BERNOULLI else self.levels

    def to_dict(self) -> dict:
        out = asdict(self)
        out["output"] = self.output.value
        out["image_shape"] = list(self.image_shape)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "PixelModelConfig":
        return cls(**values)


class PixelModel:
    """
    pθ(x) as a stack of masked convolutions.

    A trained model is read-only for log_prob / activations / scores and may be
    shared across threads.
    """

    def __init__(self, config: PixelModelConfig, params: ParamSet):
        self.config = config
        self.params = params
        k, f = config.kernel_size, config.filters
        self.masks: List[np.ndarray] = []
        in_channels = 1
        for layer in range(config.n_layers):
            kind = MaskKind.A if layer == 0 else MaskKind.B
            self.masks.append(build_mask(MaskSpec(kind, k, in_channels, f)).data.astype(params.dtype))
            in_channels = f
        self.head_mask = build_mask(MaskSpec(MaskKind.B, 1, f, config.out_channels)).data.astype(params.dtype)

    @staticmethod
    def layout(config: PixelModelConfig):
        """(name, shape, fan_in) of every parameter block in flattening order"""
        k, f = config.kernel_size, config.filters
        blocks, in_channels = [], 1
        for layer in range(config.n_layers):
            blocks.append((f"layer{layer}.weight", (f, in_channels, k, k), in_channels * k * k))
            blocks.append((f"layer{layer}.bias", (f,), None))
            in_channels = f
        blocks.append(("head.weight", (config.out_channels, f, 1, 1), f))
        blocks.append(("head.bias", (config.out_channels,), None))
        return blocks

    @classmethod
    def initialize(cls, config: PixelModelConfig, rng: np.random.Generator) -> "PixelModel":
        """He-style uniform fan-in initialization, zero biases"""
        params = ParamSet()
        for name, shape, fan_in in cls.layout(config):
            if fan_in is None:
                values = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / fan_in)
                values = rng.uniform(-bound, bound, size=shape)
            params.add(name, Tensor(values.astype(config.dtype), requires_grad=True))
        return cls(config, params)

    @classmethod
    def zeros(cls, config: PixelModelConfig) -> "PixelModel":
        params = ParamSet()
        for name, shape, _ in cls.layout(config):
            params.add(name, Tensor(np.zeros(shape, dtype=config.dtype), requires_grad=True))
        return cls(config, params)

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def astype(self, dtype) -> "PixelModel":
        config = PixelModelConfig.from_dict({**self.config.to_dict(), "dtype": np.dtype(dtype).name})
        return PixelModel(config, self.params.astype(dtype))

    # -- input handling ---------------------------------------------------

    def _as_batch(self, images) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        if images.ndim != 3 or images.shape[1:] != self.config.image_shape:
            raise ShapeError("PixelModel", "image shape", self.config.image_shape, images.shape[-2:])
        if self.config.output is OutputKind.BERNOULLI:
            if not np.all((images == 0) | (images == 1)):
                raise ValueError("Bernoulli PixelModel expects binary images (values 0 or 1)")
        elif not np.all((images >= 0) & (images < self.config.levels) & (images == np.round(images))):
            raise ValueError(f"categorical PixelModel expects integer levels in [0, {self.config.levels})")
        return images

    def _network_input(self, batch: np.ndarray) -> Tensor:
        x = batch / (self.config.levels - 1)
        return Tensor(x[:, None].astype(self.params.dtype))

    # -- forward ----------------------------------------------------------

    def forward(self, images, capture_layer: Optional[int] = None):
        """
        Run the network.

        Args:
            images: (N, H, W) or (H, W) valid pixel values
            capture_layer: Also return the post-ReLU output of this layer

        Returns:
            (logits, captured) where logits is (N, out_channels, H, W)
        """
        batch = self._as_batch(images)
        h = self._network_input(batch)
        captured = None
        pad = self.config.padding
        for layer, mask in enumerate(self.masks):
            weight = ops.mul(self.params[f"layer{layer}.weight"], mask)
            h = ops.relu(ops.conv2d(h, weight, self.params[f"layer{layer}.bias"], padding=pad))
            if layer == capture_layer:
                captured = h
        head = ops.mul(self.params["head.weight"], self.head_mask)
        logits = ops.conv2d(h, head, self.params["head.bias"])
        return logits, captured

    def logits(self, images) -> Tensor:
        return self.forward(images)[0]

    def log_prob_tensor(self, images) -> Tensor:
        """Σ over the batch and pixels of log pθ(x_i | x_<i), as a tape-recorded scalar"""
        batch = self._as_batch(images)
        logits, _ = self.forward(batch)
        if self.config.output is OutputKind.BERNOULLI:
            return ops.bernoulli_logprob(logits, batch[:, None])
        return ops.categorical_logprob(logits, batch, axis=1)

    def nll_loss(self, images) -> Tensor:
        """Mean negative log-likelihood per image in nats"""
        batch = self._as_batch(images)
        return ops.scale(self.log_prob_tensor(batch), -1.0 / len(batch))

    def log_prob(self, image) -> float:
        return self.log_prob_tensor(image).item()

    def conditional_logits(self, images) -> np.ndarray:
        """Logits of every pixel's conditional without recording, (N, out_channels, H, W)"""
        return self.logits(images).data

    def log_prob_batch(self, images) -> np.ndarray:
        """Per-image log-likelihood in nats"""
        batch = self._as_batch(images)
        logits = self.conditional_logits(batch).astype(np.float64)
        if self.config.output is OutputKind.BERNOULLI:
            l = logits[:, 0]
            return np.sum(batch * l - np.logaddexp(0, l), axis=(1, 2))
        log_p = logits - np.logaddexp.reduce(logits, axis=1, keepdims=True)
        picked = np.take_along_axis(log_p, batch[:, None].astype(np.int64), axis=1)
        return picked.sum(axis=(1, 2, 3))

    def activations(self, image, layer_index: Optional[int] = None) -> Tensor:
        """
        Flattened post-ReLU feature map of one layer for one image.

        Args:
            image: (H, W)
            layer_index: Defaults to n_layers - 2, the second-to-last masked layer

        Returns:
            Tensor of length filters * H * W
        """
        layer = self.resolve_layer(layer_index)
        _, captured = self.forward(image, capture_layer=layer)
        return ops.reshape(captured, (-1,))

    def activations_batch(self, images, layer_index: Optional[int] = None) -> np.ndarray:
        layer = self.resolve_layer(layer_index)
        _, captured = self.forward(images, capture_layer=layer)
        return captured.data.reshape(captured.shape[0], -1)

    def resolve_layer(self, layer_index: Optional[int]) -> int:
        layer = max(self.config.n_layers - 2, 0) if layer_index is None else layer_index
        if not 0 <= layer < self.config.n_layers:
            raise IndexError(f"layer_index {layer} out of range [0, {self.config.n_layers})")
        return layer

    # -- sampling ---------------------------------------------------------

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Raster-order ancestral sampling, one full forward pass per pixel"""
        height, width = self.config.image_shape
        images = np.zeros((n, height, width), dtype=np.int64)
        for r in range(height):
            for c in range(width):
                logits = self.conditional_logits(images)[:, :, r, c].astype(np.float64)
                u = rng.random(n)
                if self.config.output is OutputKind.BERNOULLI:
                    images[:, r, c] = u < expit(logits[:, 0])
                else:
                    cdf = np.cumsum(softmax(logits, axis=1), axis=1)
                    images[:, r, c] = np.minimum((cdf < u[:, None]).sum(axis=1), self.config.levels - 1)
        return images


def log_prob(model: PixelModel, image) -> float:
    """Exact log pθ(x) in nats"""
    return model.log_prob(image)


def sample(model: PixelModel, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """n images drawn from the model; (H, W) when n == 1"""
    images = model.sample(n, rng)
    return images[0] if n == 1 else images


def activations(model: PixelModel, image, layer_index: Optional[int] = None) -> Tensor:
    return model.activations(image, layer_index)


def train_pixel_model(
    images: np.ndarray,
    config: PixelModelConfig,
    training: TrainingConfig,
    init_rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
    model: Optional[PixelModel] = None,
) -> Tuple[PixelModel, TrainingHistory]:
    """
    Fit the PixelCNN by maximum likelihood.

    Args:
        images: (N, H, W) training images with valid pixel values
        config: Architecture
        training: Optimizer settings
        init_rng: Parameter initialization stream
        shuffle_rng: Minibatch shuffling stream
        model: Continue from an existing model instead of initializing

    Returns:
        (trained model, per-epoch NLL curve)
    """
    if len(images) == 0:
        raise ValueError("cannot train a PixelCNN on an empty dataset")
    model = model or PixelModel.initialize(config, init_rng)
    images = model._as_batch(images)
    subset = images[: min(len(images), 256)]
    initial_nll = -float(np.mean(model.log_prob_batch(subset)))
    logger.info(f"PixelCNN with {model.n_params} parameters, initial NLL {initial_nll:.3f} nats/image")

    history = fit(
        model.params,
        lambda idx: model.nll_loss(images[idx]),
        len(images),
        training,
        shuffle_rng,
        what="PixelCNN",
    )
    final_nll = -float(np.mean(model.log_prob_batch(subset)))
    logger.info(f"PixelCNN NLL {initial_nll:.3f} -> {final_nll:.3f} nats/image")
    return model, history
