from autodiff.tensor import Tape, Tensor, backward
from autodiff.params import ParamSet
from autodiff.optim import Adam
from autodiff import ops

__all__ = ["Tape", "Tensor", "backward", "ParamSet", "Adam", "ops"]
