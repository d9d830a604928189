"""Desk-scale GAN laboratory: diagonal spatial attention + AdaIN."""

from .errors import (
    ContractError,
    DganError,
    DimensionError,
    FormatError,
    NumericError,
    ValidationError,
)
from .tensor import Tensor, GradientMap, backward, grad_check, no_grad

__all__ = [
    "Tensor",
    "GradientMap",
    "backward",
    "grad_check",
    "no_grad",
    "DganError",
    "DimensionError",
    "ContractError",
    "ValidationError",
    "NumericError",
    "FormatError",
]
