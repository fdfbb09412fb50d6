"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class FormatError(ValueError):
    """Raised for malformed checkpoint files.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    """Raised for malformed annotation manifests (carries the 1-based line)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""
