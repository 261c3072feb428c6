"""Exception types shared across the package.

Configuration problems derive from ``ValueError`` and map to CLI exit
code 1; numerical failures derive from ``ArithmeticError`` and map to
exit code 2.
"""


class ConfigurationError(ValueError):
    """Invalid or inconsistent user-supplied configuration."""


class ParameterError(ConfigurationError):
    """A single parameter is outside its admissible range."""


class DataError(ValueError):
    """Input data cannot be used for the requested estimate."""


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class NumericalError(ArithmeticError):
    """A numerical procedure failed to converge or produced non-finite values."""


class IntegrationError(NumericalError):
    pass


class SurfaceFitError(NumericalError):
    pass


class InfeasibleConstraintsError(ConfigurationError):
    pass


class TheoremInapplicableError(ConfigurationError):
    """The closed-form optimal input density does not exist for this channel."""
