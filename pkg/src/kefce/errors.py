"""Exception types raised across the package."""


class KefceError(Exception):
    """Base class for all package errors."""


class GameError(KefceError, ValueError):
    """A game description failed validation."""


class TreeViolation(GameError):
    """A state has two parents, no parent, or points outside its layer."""


class RecallViolation(GameError):
    """An infoset mixes states with different own-action histories."""


class StochasticityError(GameError):
    """A probability row is negative or does not sum to one."""


class RewardRange(GameError):
    """A reward lies outside [0, 1]."""


class PolicyError(KefceError, ValueError):
    """A policy table has the wrong shape or invalid rows."""


class EmptyMixture(PolicyError):
    pass


class PurityRequired(PolicyError):
    """The operation needs a mixture of deterministic policies."""


class SizeError(KefceError, ValueError):
    pass


class LengthError(KefceError, ValueError):
    pass


class BudgetExceeded(KefceError, RuntimeError):
    """An enumeration would exceed its configured cap."""


class EmptyIndexSets(KefceError, ValueError):
    pass


class RangeError(KefceError, ValueError):
    pass


class CapExceeded(KefceError, ValueError):
    """A stochastic loss estimate violates the loss cap."""


class ConvergenceFailure(KefceError, RuntimeError):
    pass


class SizeGuard(KefceError, ValueError):
    """A generator was asked for a game that is too large."""
