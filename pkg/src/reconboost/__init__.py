"""Modality-alternating boosting for multi-modal classification, in numpy."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    FormatError,
    InvalidInputError,
    InvalidStateError,
    NumericalFailureError,
    ParseError,
    ReconBoostError,
)

__all__ = [
    "__version__",
    "FormatError",
    "InvalidInputError",
    "InvalidStateError",
    "NumericalFailureError",
    "ParseError",
    "ReconBoostError",
]
