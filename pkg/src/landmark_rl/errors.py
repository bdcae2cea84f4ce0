"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value (bad dims, radius range, unknown key, ...)."""


class VolumeIOError(IOError):
    """Malformed volume or checkpoint file; message names the offending field."""


class NumericalError(ArithmeticError):
    """Non-finite activation or gradient encountered during training."""


class ContractError(ValueError):
    """A caller violated an operation precondition (e.g. non-normalized policy)."""
