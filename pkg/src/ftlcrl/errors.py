from __future__ import annotations


class FtlCrlError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FtlCrlError, ValueError):
    pass


class InputError(FtlCrlError, ValueError):
    pass


class NumericalError(FtlCrlError, ArithmeticError):
    """An invariant of the linear algebra was violated (e.g. a non-SPD solve)."""


class SnapshotError(FtlCrlError):
    def __init__(self, section: str, message: str) -> None:
        super().__init__(f"snapshot section '{section}': {message}")
        self.section = section
