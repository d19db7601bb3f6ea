"""Exception types raised across the package."""


class CnrError(Exception):
    """Base class for all package errors."""


class InvalidInput(CnrError, ValueError):
    pass


class DegenerateKnots(CnrError, ValueError):
    pass


class InfeasiblePoint(CnrError, ValueError):
    """A slope that enters a logarithm or a density is not strictly positive."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InfeasibleStart(CnrError, ValueError):
    pass


class Diverged(CnrError, ArithmeticError):
    pass


class ZeroVariance(CnrError, ValueError):
    pass


class InsufficientData(CnrError, ValueError):
    pass


class ParseError(CnrError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SchemaError(CnrError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
