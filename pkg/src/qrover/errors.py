"""Exception hierarchy shared by every qrover module."""


class QroverError(Exception):
    """Base class for all errors raised by qrover."""


class NotHermitian(QroverError):
    pass


class NotPSD(QroverError):
    pass


class DimMismatch(QroverError):
    pass


class InvalidState(QroverError):
    pass


class ParseError(QroverError):
    """Raised for malformed OpenQASM input. Line and column are 1-based."""

    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"line {line}, col {col}: {message}")


class TooLarge(QroverError):
    pass


class InvalidNoise(QroverError):
    pass


class BadProbability(InvalidNoise):
    pass


class InvalidChannel(QroverError):
    pass


class InvalidPovm(QroverError):
    pass


class DistributionInvalid(QroverError):
    pass


class OutOfRange(QroverError):
    pass


class TooFewClasses(QroverError):
    pass


class SolverFailure(QroverError):
    def __init__(self, status: str, message: str = ""):
        self.status = status
        super().__init__(f"conic solver failed with status {status!r}" + (f": {message}" if message else ""))


class SandwichViolation(QroverError):
    """rlb <= optimal <= rub was broken. Indicates a bug, never expected at runtime."""


class NonShiftableGate(QroverError):
    pass


class Diverged(QroverError):
    pass


class ManifestError(QroverError):
    pass


class DatasetError(QroverError):
    pass
