"""Exception hierarchy shared by all modules."""


class QMCGreeksError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(QMCGreeksError, ValueError):
    """Invalid configuration: unsupported dimension, bad parameters, bad config file."""


class DomainError(QMCGreeksError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(QMCGreeksError, ValueError):
    """Array dimensions do not match what the operation expects."""


class FactorizationError(QMCGreeksError, ValueError):
    """A covariance matrix is not positive semidefinite."""


class DegenerateError(QMCGreeksError, ArithmeticError):
    """The requested quantity is undefined for the given (degenerate) input."""


class UnsupportedPayoffError(QMCGreeksError, ValueError):
    """The payoff cannot be handled by the requested method."""


class MissingFixtureError(QMCGreeksError, LookupError):
    """No stored reference value exists for the requested run."""
