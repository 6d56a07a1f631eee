"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, modes or settings for an operation."""


class ContractViolation(RuntimeError):
    """An operation was used outside its contract (e.g. missing gradients)."""


class DegenerateSpectrumError(ValueError):
    """Too few usable spectrum bins for a power-law fit."""


class DataError(ValueError):
    """Bad or insufficient input data (image folders, resolutions)."""


class DivergenceError(RuntimeError):
    """Training diverged (non-finite loss)."""
