"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all errors raised by foelner_lab."""


class ValidationError(LabError, ValueError):
    """A spec document or argument is malformed.

    ``field`` names the offending field (dotted path for nested specs).
    """

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class SortMismatchError(ValidationError):
    """A basis index does not belong to the operator's index sort."""


class ResourceError(LabError):
    """A dense window would exceed the configured size limit."""


class PreconditionError(LabError):
    """The hypotheses of a certified construction are not satisfied."""


class CertificationError(LabError):
    """A measured quantity exceeded the bound that was supposed to certify it."""
