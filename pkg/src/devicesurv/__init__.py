"""Weakly supervised extraction of implant events from clinical notes plus
device-surveillance statistics."""

from .errors import (
    ConfigError,
    DeviceSurvError,
    FitError,
    InputFormatError,
    MissingArtifactError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DeviceSurvError",
    "FitError",
    "InputFormatError",
    "MissingArtifactError",
    "__version__",
]
