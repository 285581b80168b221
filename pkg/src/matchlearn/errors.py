"""Exception types raised across the package."""
from __future__ import annotations


class MatchLearnError(Exception):
    """Base class for all matchlearn errors."""


class MarketFormatError(MatchLearnError):
    """A market description is structurally malformed."""


class DuplicateValueError(MarketFormatError):
    """Two entries in one agent's preference map share a cardinal value."""


class IncompleteOrderingError(MarketFormatError):
    """An agent's preference map does not cover the full opposite side."""


class OutOfRangeValueError(MarketFormatError):
    """A cardinal preference value lies outside (0, 1]."""


class EmptySideError(MarketFormatError):
    """A market has no proposers or no acceptors."""


class TooLargeError(MatchLearnError):
    """An exhaustive routine was asked to run beyond its size guard."""


class NotMatchedError(MatchLearnError):
    """A proposer expected to be matched is unmatched."""


class NoConvergenceError(MatchLearnError):
    """Best-response dynamics did not terminate within the step budget."""


class InvalidEpsilonError(MatchLearnError):
    """Experimentation rate outside the range where the rule is a proper distribution."""


class InvalidTransitionError(MatchLearnError):
    """A state update was requested that the learning rule can never produce."""


class NotConvergedError(MatchLearnError):
    """A stationary-distribution solve missed its residual target."""


class ReducibleError(MatchLearnError):
    """The transition matrix has more than one closed communicating class."""


class ZeroProbabilityError(MatchLearnError):
    """A transition required to have positive probability has none."""


class GridTooSmallError(MatchLearnError):
    """A slope fit needs at least four grid points."""
