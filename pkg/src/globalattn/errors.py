"""Exception types shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataFormatError -> 3, DivergenceError -> 4.
"""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DataFormatError(ValueError):
    """An on-disk artifact is malformed; the message names the offending field."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
