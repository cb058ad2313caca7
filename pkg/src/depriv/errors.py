"""Error families and their CLI exit codes.

Every fatal condition raised by the library is a ``DeprivError`` subclass
carrying a machine-readable ``code`` (e.g. ``DEGENERATE_VARIANCE``). The CLI
maps each family to a fixed exit status.
"""

from __future__ import annotations

from typing import Any


class DeprivError(Exception):
    exit_code = 1
    family = "INTERNAL"

    def __init__(self, code: str, message: str = "", **detail: Any):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {message}" if message else code)

    def to_dict(self) -> dict:
        return {"family": self.family, "code": self.code, "message": str(self), **self.detail}


class InputIOError(DeprivError):
    exit_code = 3
    family = "IO"


class SchemaError(DeprivError):
    exit_code = 4
    family = "SCHEMA"


class ParseError(DeprivError):
    exit_code = 5
    family = "PARSE"


class EmptyInputError(DeprivError):
    exit_code = 6
    family = "EMPTY_INPUT"


class DegenerateError(DeprivError):
    exit_code = 7
    family = "DEGENERATE"


class NumericError(DeprivError):
    exit_code = 8
    family = "NUMERIC"


class RegionError(DeprivError):
    exit_code = 9
    family = "REGION"


class NetworkError(DeprivError):
    exit_code = 10
    family = "NETWORK"


class ConfigError(DeprivError):
    exit_code = 11
    family = "CONFIG"


EXIT_CODES = {
    cls.family: cls.exit_code
    for cls in (
        DeprivError,
        InputIOError,
        SchemaError,
        ParseError,
        EmptyInputError,
        DegenerateError,
        NumericError,
        RegionError,
        NetworkError,
        ConfigError,
    )
}


class DeprivWarning(UserWarning):
    """Non-fatal condition with a reason code (DEGENERATE_EIGENSPACE, SEPARATION, ...)."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
