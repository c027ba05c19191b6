"""Exception taxonomy shared across the package.

Everything raised on purpose derives from AugLearnError so callers (and the
CLI) can tell our failures apart from genuine bugs.
"""


class AugLearnError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(AugLearnError):
    """A caller broke a documented precondition (shapes, ranges, structure)."""


class NumericError(AugLearnError):
    """A non-finite value surfaced during computation.

    ``where`` names the operation or layer that produced it so bilevel loops
    fail loudly instead of silently diverging.
    """

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{message} (at {where})" if where else message)


class SingularMatrixError(NumericError):
    """Dense solve refused: matrix singular or condition estimate too large."""


class TrainingError(NumericError):
    """Numeric failure during training, annotated with the step index."""

    def __init__(self, message: str, step: int, where: str = ""):
        self.step = step
        super().__init__(f"step {step}: {message}", where=where)


class SplitError(ContractViolation):
    """Episode split impossible (e.g. fewer than two source domains)."""


class IngestionError(AugLearnError):
    """Dataset or checkpoint file failed validation; names the file."""

    def __init__(self, message: str, path=None):
        self.path = str(path) if path is not None else None
        super().__init__(f"{path}: {message}" if path is not None else message)


class ConfigError(AugLearnError):
    """Invalid configuration (unknown keys, bad values, inconsistent modes)."""


class UndefinedRateError(AugLearnError):
    """A rate whose denominator is empty (e.g. no correctly-classified samples)."""
