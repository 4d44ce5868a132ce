"""Exception types shared across the package."""


class CompoundModelError(Exception):
    """Base class for all package errors."""


class DomainError(CompoundModelError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParameterError(CompoundModelError, ValueError):
    """A model or noise parameter violates a required inequality."""


class StructureError(CompoundModelError, ValueError):
    """A structure (collection of supports) is malformed."""


class CapacityError(CompoundModelError, RuntimeError):
    """An exhaustive enumeration would exceed its configured ceiling."""
