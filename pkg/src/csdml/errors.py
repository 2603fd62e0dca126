"""Exceptions raised by the estimation pipeline."""


class CSDMLError(Exception):
    """Base class for all pipeline errors."""

    pass


class DomainError(CSDMLError, ValueError):
    """An angle or parameter lies outside its valid domain."""

    pass


class IllConditionedError(CSDMLError):
    """A steering matrix or damped Newton system is numerically singular."""

    pass


class RecoveryError(CSDMLError):
    """Sparse recovery produced no usable support."""

    pass


class RegionError(CSDMLError):
    """A convexity-region metric is undefined for the given regions."""

    pass
