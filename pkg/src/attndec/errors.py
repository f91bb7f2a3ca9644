"""Exception hierarchy shared by every attndec module."""


class AttnDecError(Exception):
    """Base class for all errors raised by attndec."""


class InvalidArgument(AttnDecError, ValueError):
    """An argument violates an operation's precondition."""


class NumericDegeneracy(AttnDecError, ArithmeticError):
    """A matrix needed for a solve is singular or not positive definite."""


class InvalidDataset(AttnDecError, ValueError):
    """A dataset or manifest is structurally inconsistent."""
