"""
training.py
Minibatch Adam loop shared by the PixelCNN, decoder and classifier.
"""
import logging
import sys
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from tqdm import tqdm

from autodiff.optim import Adam
from autodiff.params import ParamSet
from autodiff.tensor import Tape, Tensor
from utils.errors import NonFiniteError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    """Optimizer settings; defaults match the MNIST experiment (batch 128, lr 1e-3, Adam, 50 epochs)"""
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class TrainingHistory:
    """Per-epoch curve of one training run"""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_train_loss(self) -> float:
        return self.train_loss[-1] if self.train_loss else float("nan")


def fit(
    params: ParamSet,
    batch_loss: Callable[[np.ndarray], Tensor],
    n_samples: int,
    config: TrainingConfig,
    rng: np.random.Generator,
    what: str,
    validate: Optional[Callable[[], float]] = None,
) -> TrainingHistory:
    """
    Minimize a mean minibatch loss with Adam.

    Args:
        params: Parameters updated in place
        batch_loss: Maps sample indices to a scalar mean loss built on a tape
        n_samples: Number of training samples
        config: Optimizer settings
        rng: Shuffling stream
        what: Model name used in logs and errors
        validate: Optional callable returning the validation loss, run per epoch

    Returns:
        TrainingHistory

    Raises:
        TrainingDivergedError: the loss or a gradient became non-finite
    """
    if n_samples < 1:
        raise ValueError(f"cannot train {what} on an empty dataset")
    optimizer = Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.eps)
    history = TrainingHistory()
    last_loss: Optional[float] = None

    for epoch in range(config.epochs):
        order = rng.permutation(n_samples)
        epoch_losses = []
        batches = range(0, n_samples, config.batch_size)
        progress = tqdm(batches, desc=f"{what} epoch {epoch + 1}/{config.epochs}", leave=False,
                        disable=not sys.stderr.isatty())
        for start in progress:
            indices = order[start:start + config.batch_size]
            try:
                with Tape() as tape:
                    loss = batch_loss(indices)
                grads = tape.backward(loss, params)
            except NonFiniteError as exc:
                raise TrainingDivergedError(what, epoch, history.steps, last_loss) from exc
            optimizer.step(grads)
            last_loss = loss.item()
            epoch_losses.append(last_loss)
            history.steps += 1
            if config.max_steps is not None and history.steps >= config.max_steps:
                break

        history.train_loss.append(float(np.mean(epoch_losses)))
        message = f"{what} epoch {epoch + 1}: train loss {history.train_loss[-1]:.4f}"
        if validate is not None:
            history.val_loss.append(float(validate()))
            message += f", val loss {history.val_loss[-1]:.4f}"
        logger.info(message)
        if config.max_steps is not None and history.steps >= config.max_steps:
            break
    return history
