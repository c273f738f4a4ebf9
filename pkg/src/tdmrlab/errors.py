"""Exception types shared across the package.

Argument validation failures raise plain ValueError; the classes here mark
conditions a caller may want to catch and handle (skip a sweep point, retry
a design with more data, ...).
"""


class IllConditionedDesignError(RuntimeError):
    """Normal equations of a least-squares design are numerically singular.

    Signals degenerate input (e.g. constant bits) rather than a bug.
    """


class TrellisTooLargeError(ValueError):
    """Requested joint trellis exceeds the configured state budget."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
