"""Exception types shared across the package."""


class OnTaskError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(OnTaskError):
    """Malformed input file. Carries the 1-based row number when known."""

    def __init__(self, message: str, *, row: int | None = None) -> None:
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ValidationError(OnTaskError):
    """Inputs violate a documented invariant."""


class SchemaMismatchError(OnTaskError):
    """Features do not match the schema a model was trained on."""


class ModelFormatError(OnTaskError):
    """Model file is corrupt or has an unsupported format version."""


class ExperimentConfigError(OnTaskError):
    """Experiment configuration cannot be applied to the corpus."""
