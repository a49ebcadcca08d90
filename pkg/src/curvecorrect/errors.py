"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside the domain of the operation."""


class InsufficientDataError(ValueError):
    """Too few records or distinct sample sizes to run a fit."""


class DegenerateDataError(ValueError):
    """Data cannot support the requested computation (e.g. a single class)."""


class ParseError(ValueError):
    """Malformed CSV input; carries the 1-based line and the column name."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column!r}"
            loc += ": "
        super().__init__(loc + message)


class NotFoundError(KeyError):
    """A named resource (bundled dataset, preset) does not exist."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "not found"
