"""
params.py
Named, ordered parameter collections with a stable flattening order.
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from autodiff.tensor import Tensor
from utils.errors import ShapeError


class ParamSet:
    """
    Ordered mapping name -> Tensor.

    Insertion order is the global flattening order; it is preserved through
    checkpoint save/load because the checkpoint table is written in the same
    order.
    """

    def __init__(self, tensors: Optional[Mapping[str, Tensor]] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter '{name}' already defined")
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    @property
    def dtype(self):
        first = next(iter(self._tensors.values()), None)
        return np.float32 if first is None else first.dtype

    @property
    def n_params(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def offsets(self) -> Dict[str, Tuple[int, int]]:
        """Start/stop of each block inside the flat vector"""
        out, start = {}, 0
        for name, tensor in self._tensors.items():
            out[name] = (start, start + tensor.size)
            start += tensor.size
        return out

    def flatten(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([t.data.reshape(-1) for t in self._tensors.values()])

    def blocks(self) -> Iterator[Tuple[str, np.ndarray]]:
        """Flat views of each block, in flattening order"""
        for name, tensor in self._tensors.items():
            yield name, tensor.data.reshape(-1)

    def unflatten(self, vector: np.ndarray) -> "ParamSet":
        """New ParamSet with this set's layout and the given values"""
        vector = np.asarray(vector)
        if vector.ndim != 1 or vector.shape[0] != self.n_params:
            raise ShapeError("unflatten", "n_params", self.n_params, vector.shape)
        out = ParamSet()
        for name, (start, stop) in self.offsets().items():
            tensor = self._tensors[name]
            out.add(name, Tensor(vector[start:stop].reshape(tensor.shape).astype(tensor.dtype),
                                 requires_grad=tensor.requires_grad))
        return out

    def assign(self, other: "ParamSet") -> None:
        """Copy values from another set with the same layout, in place"""
        for name, tensor in self._tensors.items():
            if tensor.shape != other[name].shape:
                raise ShapeError("assign", name, tensor.shape, other[name].shape)
            tensor.data[...] = other[name].data

    def copy(self) -> "ParamSet":
        return ParamSet({n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self._tensors.items()})

    def astype(self, dtype) -> "ParamSet":
        return ParamSet({n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad) for n, t in self._tensors.items()})

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {n: t.shape for n, t in self._tensors.items()}

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} blocks, {self.n_params} values)"
