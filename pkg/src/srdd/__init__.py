"""Single-image super-resolution with an explicitly learned HR dictionary."""

from .autograd import Tensor, backward, no_grad
from .data import DegradationSpec
from .model import SRDD, ModelConfig, NotFrozenError

__all__ = ["Tensor", "backward", "no_grad", "DegradationSpec", "SRDD", "ModelConfig", "NotFrozenError"]
__version__ = "0.1.0"
