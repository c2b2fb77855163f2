"""
gradcheck.py
Central finite-difference check of tape gradients.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from autodiff.params import ParamSet
from autodiff.tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: Optional[str]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: ParamSet,
    h: float = 1e-5,
    max_per_block: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckResult:
    """
    Compare tape gradients with (L(p+h) - L(p-h)) / 2h for parameter entries.

    Relative error is |analytic - numeric| / max(1, |analytic|). Parameters
    are perturbed in place and restored.

    Args:
        loss_fn: Builds the scalar loss from the current parameter values
        params: Parameters to check (should be float64)
        h: Finite-difference step
        max_per_block: Check at most this many random entries per block
            (None checks every entry)
        rng: Chooses the entries when max_per_block is set

    Returns:
        GradCheckResult with the worst relative error
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss, params)
    rng = rng or np.random.default_rng(0)

    worst, worst_name, checked = 0.0, None, 0
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        analytic = grads[name].data.reshape(-1)
        indices: List[int] = list(range(flat.size))
        if max_per_block is not None and flat.size > max_per_block:
            indices = sorted(rng.choice(flat.size, size=max_per_block, replace=False).tolist())
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + h
            upper = loss_fn().item()
            flat[idx] = original - h
            lower = loss_fn().item()
            flat[idx] = original
            numeric = (upper - lower) / (2 * h)
            error = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
            checked += 1
            if error > worst:
                worst, worst_name = float(error), f"{name}[{idx}]"
    return GradCheckResult(worst, checked, worst_name)
