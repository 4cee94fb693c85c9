"""Exception types raised across the package."""


class RegadError(ValueError):
    """Base class for all errors raised by this package."""

    exit_code = 2


class EmptyInputError(RegadError):
    pass


class FeatureFormatError(RegadError):
    """Malformed or inconsistent feature / bank file."""


class RegistrationError(RegadError):
    """Raised when no rigid transform can be estimated.

    ``diagnostics`` carries whatever partial information was available
    (correspondence count, best inlier count, ...).
    """

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DegenerateLabelsError(RegadError):
    exit_code = 4
