"""Wavelet-domain transformer image denoiser on a small numpy autodiff engine."""

from .errors import (
    ChecksumError,
    ConfigError,
    ContractError,
    DimensionError,
    EWTError,
    LoadError,
    NameSetMismatchError,
    NonFiniteError,
    ShapeMismatchError,
)
from .model import Model, ModelConfig, activation_footprint, build, flops_estimate, l1_loss, param_count
from .tensor import Tensor, backward, default_dtype, no_grad

__version__ = "0.1.0"
