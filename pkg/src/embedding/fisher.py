"""
fisher.py
Fisher scores, their per-dimension standardization and the Fisher kernel.
"""
import logging
import sys
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from autodiff.tensor import Tape
from utils.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


@dataclass
class FisherScore:
    """Gradient of log p(x) with respect to every model parameter, flattened in ParamSet order"""
    values: np.ndarray
    sample_id: int = 0

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ShapeError("FisherScore", "ndim", 1, self.values.ndim)
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"Fisher score of sample {self.sample_id}")

    def __len__(self) -> int:
        return len(self.values)


def fisher_score(model, image, sample_id: int = 0) -> FisherScore:
    """
    Exact score of one image.

    Args:
        model: Anything exposing `params` (ParamSet) and `log_prob_tensor(image)`
        image: One image valid for the model
        sample_id: Carried through to the result

    Raises:
        NonFiniteError: naming the parameter block whose gradient is not finite
    """
    with Tape() as tape:
        log_p = model.log_prob_tensor(image)
    grads = tape.backward(log_p, model.params)
    return FisherScore(grads.flatten(), sample_id)


def fisher_scores(
    model,
    images: np.ndarray,
    sample_ids: Optional[Sequence[int]] = None,
    threads: int = 1,
    max_pending: Optional[int] = None,
) -> Iterator[FisherScore]:
    """
    Scores of many images, yielded in input order.

    Each sample gets its own tape, so results do not depend on `threads`.
    With threads > 1 at most `max_pending` scores (default 2 * threads) are
    submitted but not yet consumed; the next image is only submitted once the
    caller has taken the oldest score.
    """
    ids = range(len(images)) if sample_ids is None else sample_ids
    progress = tqdm(total=len(images), desc="Fisher scores", leave=False, disable=not sys.stderr.isatty())
    try:
        if threads <= 1:
            for image, sample_id in zip(images, ids):
                yield fisher_score(model, image, int(sample_id))
                progress.update(1)
            return
        window = max(1, max_pending or 2 * threads)
        todo = zip(images, ids)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pending = deque(
                pool.submit(fisher_score, model, image, int(sample_id)) for image, sample_id in islice(todo, window)
            )
            while pending:
                yield pending.popleft().result()
                progress.update(1)
                for image, sample_id in islice(todo, 1):
                    pending.append(pool.submit(fisher_score, model, image, int(sample_id)))
    finally:
        progress.close()


class ScoreStandardizer:
    """
    Diagonal stand-in for F^(-1/2): per-dimension mean and standard deviation
    of a fitting set, with std floored at `eps`.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray, eps: float = SIGMA_FLOOR, n: int = 0):
        if mean.shape != std.shape:
            raise ShapeError("ScoreStandardizer", "std", mean.shape, std.shape)
        self.mean = mean
        self.std = np.maximum(std, eps)
        self.eps = eps
        self.n = n

    @property
    def dim(self) -> int:
        return len(self.mean)

    def standardize(self, score: Union[FisherScore, np.ndarray]) -> np.ndarray:
        values = score.values if isinstance(score, FisherScore) else np.asarray(score)
        if values.shape[-1] != self.dim:
            raise ShapeError("standardize", "n_params", self.dim, values.shape[-1])
        return (values - self.mean) / self.std


def fit_standardizer(scores: Iterable[Union[FisherScore, np.ndarray]], eps: float = SIGMA_FLOOR) -> ScoreStandardizer:
    """
    Streaming per-dimension mean and population standard deviation
    (Welford updates, float64), so scores never need to be held at once.
    """
    n, mean, m2 = 0, None, None
    for score in scores:
        values = np.asarray(score.values if isinstance(score, FisherScore) else score, dtype=np.float64)
        if mean is None:
            mean, m2 = np.zeros_like(values), np.zeros_like(values)
        elif values.shape != mean.shape:
            raise ShapeError("fit_standardizer", "n_params", mean.shape[0], values.shape[0])
        n += 1
        delta = values - mean
        mean += delta / n
        m2 += delta * (values - mean)
    if n == 0:
        raise ValueError("fit_standardizer needs at least one score")
    if n < 2:
        raise ValueError("fit_standardizer needs at least 2 scores to estimate a spread")
    std = np.sqrt(m2 / n)
    floored = int(np.sum(std < eps))
    if floored:
        logger.info(f"{floored} of {len(std)} score dimensions are constant; std floored at {eps}")
    return ScoreStandardizer(mean, std, eps, n)


def standardize(std: ScoreStandardizer, score) -> np.ndarray:
    return std.standardize(score)


def fisher_kernel(std: ScoreStandardizer, score_i, score_j) -> float:
    """Dot product of standardized scores"""
    a, b = std.standardize(score_i), std.standardize(score_j)
    if a.shape != b.shape:
        raise ShapeError("fisher_kernel", "n_params", a.shape, b.shape)
    return float(np.dot(a, b))


def fisher_gram(std: ScoreStandardizer, scores: Sequence) -> np.ndarray:
    """Kernel matrix K_ij = fisher_kernel(score_i, score_j)"""
    z = np.stack([std.standardize(s) for s in scores])
    gram = z @ z.T
    return (gram + gram.T) / 2
