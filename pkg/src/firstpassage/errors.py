"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class SeriesConvergenceError(ArithmeticError):
    """A series could not be summed to the requested tolerance.

    The best available value and its error estimate are attached so callers
    can decide whether to use them anyway.
    """

    def __init__(self, message: str, value: float, bound: float):
        super().__init__(message)
        self.value = value
        self.bound = bound


class TruncationError(ArithmeticError):
    """Probability mass lost to state-space truncation exceeds the cap."""

    def __init__(self, message: str, deficit: float):
        super().__init__(message)
        self.deficit = deficit


class RangeError(OverflowError):
    """Result overflows a double; ``log_value`` holds its natural log."""

    def __init__(self, message: str, log_value: float):
        super().__init__(message)
        self.log_value = log_value


class HorizonError(ValueError):
    """A realized path is too short to determine the requested functional."""


class InvariantViolation(RuntimeError):
    """An internal invariant failed; indicates a bug or corrupted input."""


class MonteCarloError(RuntimeError):
    """A replication kernel raised; carries enough context to replay it."""

    def __init__(self, message: str, seed: int, stream_id: int, first_replica: int, last_replica: int):
        super().__init__(message)
        self.seed = seed
        self.stream_id = stream_id
        self.first_replica = first_replica
        self.last_replica = last_replica
