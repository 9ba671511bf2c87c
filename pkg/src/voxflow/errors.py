"""Shared exception types."""


class NoOverlapError(ValueError):
    """Raised when two fields have no jointly valid cells to compare."""


class DivergedError(RuntimeError):
    """Raised when an optimization produces a non-finite loss.

    Carries the iteration index at which the divergence was detected.
    """

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"optimization diverged at iteration {iteration}")


class FormatError(ValueError):
    """Raised when a binary file fails structural validation.

    ``field`` names the header field or chunk that failed.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
