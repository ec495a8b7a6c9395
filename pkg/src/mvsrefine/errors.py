"""Exception types raised across the package."""


class MVSRefineError(Exception):
    """Base class for all package errors."""


class BehindCamera(MVSRefineError):
    pass


class NonPositiveDepth(MVSRefineError):
    pass


class ZeroNormal(MVSRefineError):
    pass


class DegenerateFace(MVSRefineError):
    pass


class InvalidMesh(MVSRefineError):
    pass


class InvalidCamera(MVSRefineError):
    pass


class EmptyInput(MVSRefineError):
    pass


class NoMutualCoverage(MVSRefineError):
    pass


class InvalidParams(MVSRefineError):
    pass


class FormatError(MVSRefineError):
    """Malformed input file; carries the offending path and line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ZeroVariance(MVSRefineError):
    pass


class NumericalFailure(MVSRefineError):
    pass
