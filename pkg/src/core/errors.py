"""Exception hierarchy for collusion-lab."""

from typing import Any, Optional


class CollusionLabError(Exception):
    """Base class for every error raised by collusion-lab."""


class InvalidInstanceError(CollusionLabError, ValueError):
    """An instance violates one of the domain invariants."""


class NegativeValueError(InvalidInstanceError):
    def __init__(self, agent: int, good: int, value: Any):
        self.agent = agent
        self.good = good
        self.value = value
        super().__init__(f"Negative value {value} for agent {agent}, good {good}")


class EmptyInstanceError(InvalidInstanceError):
    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        super().__init__(f"Instance needs n >= 1 and m >= 1, got n={n}, m={m}")


class ZeroRowError(InvalidInstanceError):
    """Raised for market use when an agent values every good at 0."""

    def __init__(self, agent: int):
        self.agent = agent
        super().__init__(f"Agent {agent} has no positively valued good")


class InvalidTError(CollusionLabError, ValueError):
    def __init__(self, T: int, reason: str):
        self.T = T
        self.reason = reason
        super().__init__(f"Invalid coupling T={T}: {reason}")


class InvalidParamsError(CollusionLabError, ValueError):
    """Generator parameters outside their admissible range."""


class SearchTooLargeError(CollusionLabError, ValueError):
    def __init__(self, count: int, limit: int, what: str = "profile evaluations"):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} {what} exceed the limit of {limit}")


class PreconditionViolatedError(CollusionLabError, ValueError):
    """An operation was called on inputs outside its precondition."""


class NoConvergenceError(CollusionLabError, RuntimeError):
    def __init__(self, iterations: int, residuals: Optional[Any] = None):
        self.iterations = iterations
        self.residuals = residuals
        super().__init__(
            f"Solver did not converge after {iterations} iterations (last residuals: {residuals})"
        )
