"""
tensor.py
Dense tensors and the computation tape used for reverse-mode gradients.

Primitive operations (see ops.py) call `record` to append themselves to the
tape that is active on the current thread. `Tape.backward` then replays the
adjoints in exact reverse execution order.
"""
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import NonFiniteError, TapeError

SUPPORTED_DTYPES = (np.float32, np.float64)

_local = threading.local()


class Tensor:
    """
    A dense n-dimensional array plus the bookkeeping needed for gradients.

    Leaves that should receive gradients (parameters) are created with
    `requires_grad=True`; operation outputs inherit the flag when recorded.
    """
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        array = np.asarray(data, dtype=dtype)
        if array.dtype not in SUPPORTED_DTYPES:
            array = array.astype(np.float64 if dtype is None else dtype)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise TapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


@dataclass
class _Record:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    adjoint: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """
    Ordered record of executed primitives.

    Use as a context manager around the forward pass, then call `backward`
    exactly once:

        with Tape() as tape:
            loss = model.nll(batch)
        grads = tape.backward(loss, model.params)
    """

    def __init__(self):
        self.records: List[_Record] = []
        self._consumed = False
        self._open = False

    def __enter__(self) -> "Tape":
        if self._consumed:
            raise TapeError("tape already consumed by backward(); record a new forward pass")
        _stack().append(self)
        self._open = True
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        self._open = False
        return False

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, params):
        """
        Gradient of a scalar loss with respect to every parameter.

        Args:
            loss: Scalar tensor produced while this tape was recording
            params: ParamSet whose tensors are the leaves of interest

        Returns:
            ParamSet of gradients, same names, shapes and order as `params`

        Raises:
            TapeError: second call on the same tape, or non-scalar loss
        """
        from autodiff.params import ParamSet

        if self._consumed:
            raise TapeError("backward() called twice on the same tape")
        if loss.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        grads = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones_like(loss.data)
        for record in reversed(self.records):
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            input_grads = record.adjoint(grad_out)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        out = {}
        for name, tensor in params.items():
            grad = grads.get(id(tensor))
            if grad is None:
                grad = np.zeros_like(tensor.data)
            elif not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"gradient of parameter block '{name}'")
            out[name] = Tensor(np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape), name=name)
        self.records.clear()
        return ParamSet(out)


def _stack() -> List[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    """Tape currently recording on this thread, if any."""
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def record(op: str, inputs: Sequence[Tensor], data: np.ndarray, adjoint) -> Tensor:
    """
    Wrap an op result, checking finiteness and appending to the active tape.

    Args:
        op: Name used in error messages
        inputs: Tensors the op read
        data: Forward result
        adjoint: Maps the output gradient to one gradient (or None) per input

    Returns:
        Output tensor
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        tape.records.append(_Record(op, tuple(inputs), out, adjoint))
    return out


def backward(loss: Tensor, params, tape: Optional[Tape] = None):
    """Functional form of `Tape.backward`; defaults to the innermost open tape."""
    tape = tape or active_tape()
    if tape is None:
        raise TapeError("backward() needs a tape; wrap the forward pass in `with Tape() as tape:`")
    return tape.backward(loss, params)
