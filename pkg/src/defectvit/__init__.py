"""From-scratch transformer engine and CLI for surface-defect image classification."""

__version__ = "0.1.0"

from .model import ModelConfig, ModelParams, forward, init_params
from .tensor import Tensor

__all__ = ["ModelConfig", "ModelParams", "Tensor", "forward", "init_params", "__version__"]
