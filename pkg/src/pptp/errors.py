"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PipelineError):
    """Data violates a documented invariant or precondition."""


class MissingChannel(PipelineError):
    """A required signal channel is absent from a session."""

    def __init__(self, kind, message=None):
        self.kind = kind
        super().__init__(message or f"missing channel: {kind}")


class FormatError(PipelineError):
    """On-disk file contents disagree with the session metadata."""


class NotEnoughSamples(PipelineError):
    """A window request reaches outside the recorded sample span."""


class ConfigError(PipelineError):
    """A configuration value is outside its allowed domain."""


class ShapeError(PipelineError):
    """Array shapes are incompatible with the requested operation."""


class SplitError(PipelineError):
    """A train/test split cannot be formed from the given data."""


class TrainingError(PipelineError):
    """Training diverged or otherwise failed; carries the epoch index."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class SessionWriteError(PipelineError):
    """Writing a session directory to disk failed."""
