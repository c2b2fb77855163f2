"""
decoder.py
Supervised convolutional decoder mapping embeddings back to images:
Linear -> ConvTranspose -> residual block -> ConvTranspose -> ConvTranspose.
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

UPSAMPLING_STAGES = 3
STRIDE = 2


class DecoderHead(Enum):
    CATEGORICAL = "categorical"
    BERNOULLI = "bernoulli"


def seed_shape(image_shape: Tuple[int, int]) -> Tuple[Tuple[int, int], List[Tuple[int, int]]]:
    """
    Spatial size of the reshaped dense output and the output_padding of each
    upsampling stage, found by walking back from the image size.

    Each stage maps h -> 2h - 1 + output_padding (kernel 5, stride 2, padding 2).
    """
    if min(image_shape) < 2:
        raise ShapeError("Decoder", "image extent", ">= 2", tuple(image_shape))
    sizes = [tuple(image_shape)]
    paddings = []
    for _ in range(UPSAMPLING_STAGES):
        stage_pad, prev = [], []
        for extent in sizes[-1]:
            if extent % 2 == 0:
                prev.append(extent // 2)
                stage_pad.append(1)
            else:
                prev.append((extent + 1) // 2)
                stage_pad.append(0)
        sizes.append(tuple(prev))
        paddings.append(tuple(stage_pad))
    return sizes[-1], paddings[::-1]


@dataclass
class DecoderConfig:
    """Defaults are the MNIST decoder: Linear(1024), ConvT(128, k5, s2), ResBlock(128), ConvT(32), ConvT(2)"""
    input_dim: int = 1024
    dense_width: int = 1024
    up_channels: int = 128
    mid_channels: int = 32
    kernel_size: int = 5
    image_shape: Tuple[int, int] = (28, 28)
    head: DecoderHead = DecoderHead.CATEGORICAL
    levels: int = 2
    norm_momentum: float = 0.1
    norm_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        self.head = DecoderHead(self.head)
        self.image_shape = tuple(int(v) for v in self.image_shape)
        if self.input_dim < 1:
            raise ValueError("decoder input_dim must be >= 1")
        (h0, w0), paddings = seed_shape(self.image_shape)
        if any(p[0] != p[1] for p in paddings):
            raise ShapeError("DecoderConfig", "image_shape", "extents with matching parity chains", self.image_shape)
        if self.dense_width % (h0 * w0) != 0:
            raise ShapeError("DecoderConfig", "dense_width", f"a multiple of {h0 * w0}", self.dense_width)
        if self.head is DecoderHead.BERNOULLI:
            self.levels = 2

    @property
    def seed_hw(self) -> Tuple[int, int]:
        return seed_shape(self.image_shape)[0]

    @property
    def seed_channels(self) -> int:
        h0, w0 = self.seed_hw
        return self.dense_width // (h0 * w0)

    @property
    def output_paddings(self) -> List[int]:
        return [p[0] for p in seed_shape(self.image_shape)[1]]

    @property
    def out_channels(self) -> int:
        return 1 if self.head is DecoderHead.BERNOULLI else self.levels

    def to_dict(self) -> dict:
        out = asdict(self)
        out["head"] = self.head.value
        out["image_shape"] = list(self.image_shape)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "DecoderConfig":
        return cls(**values)


NORMS = ("res.norm1", "res.norm2", "res.norm3", "up2.norm")


class Decoder:
    """
    Dec(z): per-pixel logits for an embedding.

    Normalization layers use running statistics held in `buffers`. In training
    mode the statistics are refreshed from the batch (EMA) before being applied
    as constants; in evaluation mode they are frozen, so decode is deterministic.
    """

    def __init__(self, config: DecoderConfig, params: ParamSet, buffers: Optional[ParamSet] = None):
        self.config = config
        self.params = params
        self.buffers = buffers if buffers is not None else self.initial_buffers(config)

    @staticmethod
    def layout(config: DecoderConfig):
        """(name, shape, kind, fan_in) of every parameter block"""
        k, c0 = config.kernel_size, config.seed_channels
        up, mid = config.up_channels, config.mid_channels
        return [
            ("dense.weight", (config.dense_width, config.input_dim), "weight", config.input_dim),
            ("dense.bias", (config.dense_width,), "zero", None),
            ("up1.weight", (c0, up, k, k), "weight", c0 * k * k // STRIDE ** 2),
            ("up1.bias", (up,), "zero", None),
            ("res.conv1.weight", (up, up, 1, 1), "weight", up),
            ("res.norm1.gamma", (up,), "one", None),
            ("res.norm1.beta", (up,), "zero", None),
            ("res.conv2.weight", (up, up, 3, 3), "weight", up * 9),
            ("res.norm2.gamma", (up,), "one", None),
            ("res.norm2.beta", (up,), "zero", None),
            ("res.conv3.weight", (up, up, 1, 1), "weight", up),
            ("res.norm3.gamma", (up,), "one", None),
            ("res.norm3.beta", (up,), "zero", None),
            ("up2.weight", (up, mid, k, k), "weight", up * k * k // STRIDE ** 2),
            ("up2.bias", (mid,), "zero", None),
            ("up2.norm.gamma", (mid,), "one", None),
            ("up2.norm.beta", (mid,), "zero", None),
            # zero head: every pixel starts at the uniform distribution
            ("head.weight", (mid, config.out_channels, k, k), "zero", None),
            ("head.bias", (config.out_channels,), "zero", None),
        ]

    @staticmethod
    def initial_buffers(config: DecoderConfig) -> ParamSet:
        buffers = ParamSet()
        for norm in NORMS:
            channels = config.mid_channels if norm == "up2.norm" else config.up_channels
            buffers.add(f"{norm}.running_mean", Tensor(np.zeros(channels, dtype=config.dtype)))
            buffers.add(f"{norm}.running_var", Tensor(np.ones(channels, dtype=config.dtype)))
        return buffers

    @classmethod
    def initialize(cls, config: DecoderConfig, rng: np.random.Generator) -> "Decoder":
        params = ParamSet()
        for name, shape, kind, fan_in in cls.layout(config):
            if kind == "weight":
                bound = np.sqrt(6.0 / max(fan_in, 1))
                values = rng.uniform(-bound, bound, size=shape)
            elif kind == "one":
                values = np.ones(shape)
            else:
                values = np.zeros(shape)
            params.add(name, Tensor(values.astype(config.dtype), requires_grad=True))
        return cls(config, params)

    @classmethod
    def zeros(cls, config: DecoderConfig) -> "Decoder":
        params = ParamSet()
        for name, shape, _, _ in cls.layout(config):
            params.add(name, Tensor(np.zeros(shape, dtype=config.dtype), requires_grad=True))
        return cls(config, params)

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def astype(self, dtype) -> "Decoder":
        config = DecoderConfig.from_dict({**self.config.to_dict(), "dtype": np.dtype(dtype).name})
        return Decoder(config, self.params.astype(dtype), self.buffers.astype(dtype))

    def _norm(self, name: str, x: Tensor, training: bool) -> Tensor:
        mean = self.buffers[f"{name}.running_mean"].data
        var = self.buffers[f"{name}.running_var"].data
        if training:
            momentum = self.config.norm_momentum
            axes = (0, 2, 3)
            mean *= 1 - momentum
            mean += momentum * x.data.mean(axis=axes)
            var *= 1 - momentum
            var += momentum * x.data.var(axis=axes)
        return ops.channel_affine(
            x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
            mean.copy(), var.copy(), eps=self.config.norm_eps,
        )

    def _as_batch(self, z) -> np.ndarray:
        z = np.asarray(z.values if hasattr(z, "values") else z)
        if z.ndim == 1:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.config.input_dim:
            raise ShapeError("decode", "embedding dim", self.config.input_dim, z.shape[-1])
        return z.astype(self.params.dtype)

    def forward(self, z, training: bool = False) -> Tensor:
        """
        Args:
            z: (N, input_dim) embeddings, a single vector or an Embedding
            training: Refresh normalization statistics from this batch

        Returns:
            Logits (N, out_channels, H, W)
        """
        batch = self._as_batch(z)
        cfg, p = self.config, self.params
        pad = (cfg.kernel_size - 1) // 2
        op1, op2, op3 = cfg.output_paddings

        h = ops.relu(ops.linear(Tensor(batch), p["dense.weight"], p["dense.bias"]))
        h = ops.reshape(h, (len(batch), cfg.seed_channels) + cfg.seed_hw)
        h = ops.relu(ops.conv_transpose2d(h, p["up1.weight"], p["up1.bias"], STRIDE, pad, op1))

        shortcut = h
        r = ops.relu(self._norm("res.norm1", ops.conv2d(h, p["res.conv1.weight"]), training))
        r = ops.relu(self._norm("res.norm2", ops.conv2d(r, p["res.conv2.weight"], padding=1), training))
        r = ops.relu(self._norm("res.norm3", ops.conv2d(r, p["res.conv3.weight"]), training))
        h = ops.relu(ops.add(r, shortcut))

        h = ops.conv_transpose2d(h, p["up2.weight"], p["up2.bias"], STRIDE, pad, op2)
        h = ops.relu(self._norm("up2.norm", h, training))
        return ops.conv_transpose2d(h, p["head.weight"], p["head.bias"], STRIDE, pad, op3)

    def decode(self, z) -> Tensor:
        return self.forward(z, training=False)

    def nll_loss(self, z, images, training: bool = False) -> Tensor:
        """Mean per-pixel negative log-likelihood in nats"""
        logits = self.forward(z, training=training)
        targets = self._targets(images, logits.shape[0])
        if self.config.head is DecoderHead.BERNOULLI:
            log_p = ops.bernoulli_logprob(logits, targets[:, None])
        else:
            log_p = ops.categorical_logprob(logits, targets, axis=1)
        return ops.scale(log_p, -1.0 / targets.size)

    def _targets(self, images, n: int) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 2:
            images = images[None]
        if images.shape != (n,) + self.config.image_shape:
            raise ShapeError("Decoder", "target images", (n,) + self.config.image_shape, images.shape)
        return images

    def mode_image(self, z, sample: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Point image per embedding: the most probable value per pixel (ties go
        to 0), or a draw from the per-pixel distribution when sample=True.
        """
        logits = self.decode(z).data.astype(np.float64)
        if sample:
            rng = rng or np.random.default_rng(0)
            if self.config.head is DecoderHead.BERNOULLI:
                return (rng.random(logits[:, 0].shape) < expit(logits[:, 0])).astype(np.int64)
            cdf = np.cumsum(softmax(logits, axis=1), axis=1)
            u = rng.random(logits[:, 0].shape)[:, None]
            return np.minimum((cdf < u).sum(axis=1), self.config.levels - 1)
        if self.config.head is DecoderHead.BERNOULLI:
            return (logits[:, 0] > 0).astype(np.int64)
        return np.argmax(logits, axis=1)


def decode(decoder: Decoder, z) -> Tensor:
    """Per-pixel logits for an embedding (or a batch of them)"""
    return decoder.decode(z)


def reconstruction_error(decoder: Decoder, embeddings, images, batch_size: int = 256) -> float:
    """
    Mean per-pixel negative log-likelihood in nats over a set of
    (embedding, image) pairs.
    """
    embeddings = np.asarray(embeddings)
    images = np.asarray(images)
    if len(embeddings) == 0:
        raise ValueError("reconstruction_error needs at least one pair")
    total = 0.0
    for start in range(0, len(embeddings), batch_size):
        z = embeddings[start:start + batch_size]
        loss = decoder.nll_loss(z, images[start:start + batch_size])
        total += loss.item() * len(z)
    return total / len(embeddings)


def train_decoder(
    embeddings: np.ndarray,
    images: np.ndarray,
    config: DecoderConfig,
    training: TrainingConfig,
    init_rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
    split_rng: np.random.Generator,
    val_fraction: float = 0.1,
) -> Tuple[Decoder, TrainingHistory]:
    """
    Fit a decoder on (embedding, image) pairs by per-pixel cross-entropy.

    A val_fraction share of the pairs (chosen by split_rng) is held out and
    its reconstruction error logged each epoch.

    Returns:
        (trained decoder, training history)
    """
    embeddings = np.asarray(embeddings)
    images = np.asarray(images)
    if len(embeddings) == 0:
        raise ValueError("cannot train a decoder on an empty set of pairs")
    if len(embeddings) != len(images):
        raise ShapeError("train_decoder", "pairs", len(embeddings), len(images))
    if embeddings.shape[1] != config.input_dim:
        raise ShapeError("train_decoder", "embedding dim", config.input_dim, embeddings.shape[1])

    order = split_rng.permutation(len(embeddings))
    n_val = int(round(len(order) * val_fraction)) if len(order) >= 10 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    z_train, x_train = embeddings[train_idx], images[train_idx]

    decoder = Decoder.initialize(config, init_rng)
    logger.info(f"Decoder with {decoder.n_params} parameters on {len(train_idx)} train / {n_val} val pairs")

    validate = None
    if n_val:
        validate = lambda: reconstruction_error(decoder, embeddings[val_idx], images[val_idx])  # noqa: E731

    history = fit(
        decoder.params,
        lambda idx: decoder.nll_loss(z_train[idx], x_train[idx], training=True),
        len(train_idx),
        training,
        shuffle_rng,
        what="Decoder",
        validate=validate,
    )
    return decoder, history
