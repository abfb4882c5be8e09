"""Exception types raised across the package."""


class GCAError(Exception):
    """Base class for every error raised by :mod:`gca`."""


class OutOfBounds(GCAError, ValueError):
    pass


class EmptyInput(GCAError, ValueError):
    pass


class InvalidArchitecture(GCAError, ValueError):
    pass


class TargetOutsideSupport(GCAError, ValueError):
    pass


class NonFiniteGradient(GCAError, FloatingPointError):
    pass


class NonFiniteLoss(GCAError, FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class BufferUnderflow(GCAError, RuntimeError):
    pass


class EmptyDataset(GCAError, ValueError):
    pass


class KTooSmall(GCAError, ValueError):
    pass


class InvalidResolution(GCAError, ValueError):
    pass


class DegenerateInput(GCAError, ValueError):
    pass


class NoParts(GCAError, ValueError):
    pass


class ParseError(GCAError, ValueError):
    """Malformed input file. ``path`` and ``line`` locate the problem when known."""

    def __init__(self, message, path=None, line=None):
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        else:
            where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.path = path
        self.line = line


class ResolutionMismatch(GCAError, ValueError):
    pass


class ConfigError(GCAError, ValueError):
    pass
