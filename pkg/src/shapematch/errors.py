"""Exception hierarchy shared by all shapematch modules."""


class ShapeMatchError(Exception):
    """Base class for all toolkit errors."""


class UserInputError(ShapeMatchError):
    """A user-supplied file, argument, or configuration is invalid."""


class LoadError(UserInputError):
    """A shape or feature file failed to parse.

    The message names the offending file and, where possible, the line.
    """


class ConfigError(UserInputError):
    """Unknown configuration key or unparsable configuration value."""


class EigensolverError(ShapeMatchError):
    """The generalized eigensolver failed; message carries diagnostics."""


class SolverError(ShapeMatchError):
    """The functional-map solver hit a singular or ill-conditioned system."""


class RefinementError(ShapeMatchError):
    """Feature refinement aborted; ``trace`` holds the loss records so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
