"""Touchpoint-count purchase prediction with a small sigmoid network ensemble."""

__version__ = "0.1.0"

from .errors import CalibrationError, ParseError, TouchnetError, TrainingError, ValidationError

__all__ = [
    "__version__",
    "CalibrationError",
    "ParseError",
    "TouchnetError",
    "TrainingError",
    "ValidationError",
]
