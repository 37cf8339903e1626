"""Exception hierarchy shared by every touchnet module."""


class TouchnetError(Exception):
    """Base class for all errors raised by touchnet."""


class ParseError(TouchnetError, ValueError):
    """A malformed row in an input file. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(TouchnetError, ValueError):
    """Input that parses but violates a data contract."""


class CalibrationError(TouchnetError):
    """The synthetic generator could not hit its target buyer rate."""


class TrainingError(TouchnetError):
    """Optimisation produced a non-finite loss or gradient."""
