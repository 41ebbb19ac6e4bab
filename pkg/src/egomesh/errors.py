"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class ContractError(ValueError):
    """A documented precondition or postcondition was violated."""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or infeasible sizes."""


class FieldOfViewError(ValueError):
    """A point or pixel falls outside the 180-degree hemisphere."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the requested operation (zero norm/variance)."""


class FormatError(ValueError):
    """Malformed binary file.  ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
