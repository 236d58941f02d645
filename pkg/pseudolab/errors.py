"""PseudoLab exceptions"""


class PseudoLabError(Exception):
    """Base class for every error raised by the library."""


class DomainError(PseudoLabError, ValueError):
    """An argument violates a type invariant or an operation precondition."""


class DegenerateError(PseudoLabError, ArithmeticError):
    """The computation has no meaningful result for the given data."""


class UndefinedMetricError(DegenerateError):
    """A metric is undefined, e.g. mAP over a dataset without ground truth."""
