"""Exception types shared across the package."""


class ClickFoleyError(Exception):
    """Base class for package errors."""


class DecodeError(ClickFoleyError):
    """A media file could not be decoded."""


class EmptyMediaError(ClickFoleyError):
    """A decoded video or audio stream contained no data."""


class ShapeMismatchError(ClickFoleyError):
    """Array arguments disagree on a shared dimension."""


class InvalidPromptError(ClickFoleyError):
    """A click set or text prompt cannot seed a segmentation."""


class AdapterUnavailableError(ClickFoleyError):
    """A pluggable adapter is missing or cannot serve the request."""


class TrainingDivergedError(ClickFoleyError):
    """A training loop produced a non-finite loss."""


class ConfigError(ClickFoleyError):
    """Unknown or ill-typed configuration key."""
