"""Exception hierarchy shared by all realit modules.

The CLI maps the three top-level families onto exit codes
(config -> 2, data -> 3, numeric -> 4).
"""


class RealitError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RealitError):
    pass


class DataError(RealitError):
    pass


class NumericError(RealitError):
    pass


class TokenizeError(DataError):
    def __init__(self, msg: str, line: int | None = None) -> None:
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.line = line


class UnsupportedSyntax(TokenizeError):
    pass


class InvalidEdit(DataError):
    pass


class InvalidFix(DataError):
    pass


class MalformedRecord(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptySet(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyAfterSubsample(DataError):
    pass


class TooLong(DataError):
    pass


class TargetUnreachable(DataError):
    pass


class QueryIsNoop(RealitError):
    pass


class ShapeMismatch(NumericError):
    def __init__(self, op: str, *shapes) -> None:
        shown = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.shapes = shapes


class NonFiniteGradient(NumericError):
    def __init__(self, name: str) -> None:
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class NonFiniteLoss(NumericError):
    pass


class CheckpointMismatch(ConfigError):
    pass
