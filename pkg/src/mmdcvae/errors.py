"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2, data-shaped
problems (DimensionError, ContractError, ParseError, SchemaError) -> 3,
NumericError -> 4.
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ParseError(ValueError):
    """A data file could not be parsed (bad cell, ragged row, non-finite value)."""


class SchemaError(ValueError):
    """A data file is missing a required column or has the wrong layout."""


class ConfigError(ValueError):
    """A configuration document is malformed, has unknown keys, or bad values."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values where finite ones are required."""
