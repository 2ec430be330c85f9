"""Exception hierarchy shared by every mdcc module."""


class MDCCError(Exception):
    """Base class for all errors raised by mdcc."""


class ShapeError(MDCCError, ValueError):
    """Array dimensions do not chain or do not match a declared layout."""


class StateError(MDCCError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class FitError(MDCCError, ValueError):
    """Distribution fitting or calibration could not produce a model."""


class TrainingError(MDCCError, RuntimeError):
    """A node could not be trained from the data it was given."""


class ConfigError(MDCCError, ValueError):
    """A configuration value is missing or out of bounds."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataFormatError(MDCCError, ValueError):
    """A dataset file could not be parsed."""


class ModelFormatError(MDCCError, ValueError):
    """A serialized model is corrupt, truncated, or from another version."""
