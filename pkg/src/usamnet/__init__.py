"""Stereo disparity estimation with optional segmentation input and bottleneck self-attention.

The network, its training loop and the evaluation suite run on a small
numpy reverse-mode autodiff engine (:mod:`usamnet.tensor`, :mod:`usamnet.ops`).
"""

from .errors import (
    CheckpointFormatError,
    ConfigurationError,
    DataError,
    DegenerateBatchError,
    GenerationError,
    IncompatibleCheckpointError,
    NoValidPixelsError,
    UsageError,
    UsamError,
)
from .model import ModelConfig, UsamNet, build_model, forward, param_count
from .tensor import Tensor, backward, float64_mode, no_grad

__version__ = "0.1.0"

__all__ = [
    "CheckpointFormatError",
    "ConfigurationError",
    "DataError",
    "DegenerateBatchError",
    "GenerationError",
    "IncompatibleCheckpointError",
    "ModelConfig",
    "NoValidPixelsError",
    "Tensor",
    "UsageError",
    "UsamError",
    "UsamNet",
    "backward",
    "build_model",
    "float64_mode",
    "forward",
    "no_grad",
    "param_count",
]
