"""Exception hierarchy.  Every error raised by the package derives from
:class:`StreamCPError`."""


class StreamCPError(Exception):
    pass


class DimensionError(StreamCPError, ValueError):
    pass


class ArgumentError(StreamCPError, ValueError):
    pass


class InitializationError(StreamCPError, ValueError):
    pass


class IngestionError(StreamCPError, ValueError):
    pass


class StateError(StreamCPError, RuntimeError):
    pass


class MetricError(StreamCPError, ValueError):
    pass


class FormatError(StreamCPError, ValueError):
    """Malformed slice, sidecar or checkpoint file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
            if line is not None:
                where += f"{line}:"
            where += " "
        super().__init__(where + message)


class ConfigError(StreamCPError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message if key is None else f"{key}: {message}")


class NumericalError(StreamCPError, ArithmeticError):
    """An R x R precision matrix stayed indefinite after jitter retries."""

    def __init__(self, message, mode=None, row=None):
        self.mode = mode
        self.row = row
        super().__init__(message)
