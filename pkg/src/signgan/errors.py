"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto exit codes:
``UsageError`` -> 1, ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class SignGanError(Exception):
    exit_code = 2


class UsageError(SignGanError):
    exit_code = 1


class DataError(SignGanError):
    exit_code = 2


class NumericError(SignGanError):
    exit_code = 3


class ShapeError(NumericError, ValueError):
    """Operand shapes do not conform. ``dims`` names the offending dimensions."""

    def __init__(self, message, **dims):
        self.dims = dims
        detail = ", ".join(f"{k}={v}" for k, v in dims.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class ParseError(DataError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class UnsupportedFormatError(ParseError):
    pass


class FormatError(DataError):
    """A binary container (SNF dataset or checkpoint) is malformed."""


SnfError = FormatError


class BadMagicError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class VersionError(FormatError):
    pass


class PolicyError(DataError):
    pass


class TestSetMismatchError(DataError):
    __test__ = False  # keep pytest from collecting this as a test class
