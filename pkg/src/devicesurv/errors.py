"""Exception hierarchy shared across the pipeline."""


class DeviceSurvError(Exception):
    """Base class for all library errors."""

    code = "error"

    def __init__(self, message, context=None):
        super().__init__(message)
        self.message = message
        self.context = dict(context or {})

    def to_json(self):
        return {"code": self.code, "message": self.message, "context": self.context}


class ConfigError(DeviceSurvError):
    code = "config"


class InputFormatError(DeviceSurvError):
    """Malformed input record or file."""

    code = "input_format"


class MissingArtifactError(DeviceSurvError):
    """A required upstream artifact does not exist."""

    code = "missing_artifact"


class FitError(DeviceSurvError):
    """A statistical fit could not be completed."""

    code = "fit"
