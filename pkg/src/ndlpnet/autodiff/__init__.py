"""Minimal dense-tensor autodiff: values, tape, ops, gradient checking."""

from . import functional
from .gradcheck import DEFAULT_TOLERANCE, GradReport, grad_check, run_suite
from .tensor import (
    DEFAULT_DTYPE,
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    record,
)

__all__ = [
    "DEFAULT_DTYPE",
    "DEFAULT_TOLERANCE",
    "GradReport",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "functional",
    "grad_check",
    "record",
    "run_suite",
]
