"""Exception types shared across the package."""


class DctHistoError(Exception):
    pass


class DimensionError(DctHistoError, ValueError):
    """Shapes or sizes that cannot be combined."""


class ConfigError(DctHistoError, ValueError):
    pass


class ContractError(DctHistoError, ValueError):
    """A value was produced under one convention and consumed under another."""


class NumericError(DctHistoError, ArithmeticError):
    pass


class InputError(DctHistoError, ValueError):
    pass


class FormatError(DctHistoError, ValueError):
    """Malformed file contents. ``offset`` is the byte position when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(InputError):
    def __init__(self, message: str, row: int | None = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
