class OTCAError(Exception):
    pass


class DegenerateError(OTCAError, ValueError):
    """Input where a quantity is undefined (zero norm, zero variance)."""


class ConfigError(OTCAError, ValueError):
    pass


class NumericalError(OTCAError, FloatingPointError):
    """NaN/Inf appeared in a state, loss or gradient."""


class DegenerateGroupWarning(UserWarning):
    pass
