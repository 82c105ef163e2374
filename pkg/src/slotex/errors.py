"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: data problems (parse/schema/config,
oversized gold sets) exit 2, numeric failures exit 3, usage errors exit 1.
"""


class SlotexError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SlotexError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(SlotexError, ValueError):
    """Input lies outside an operation's mathematical domain."""


class NumericError(SlotexError, ArithmeticError):
    """NaN/Inf or other numeric breakdown detected."""


class ContractError(SlotexError, ValueError):
    """A caller violated an API precondition."""


class CapacityError(SlotexError, ValueError):
    """More gold triples than available slots."""


class ConfigError(SlotexError, ValueError):
    """Invalid or infeasible configuration."""


class ParseError(SlotexError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line_number=None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class SchemaError(SlotexError, ValueError):
    """Input file is well-formed but violates the expected schema."""
