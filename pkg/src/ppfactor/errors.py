"""Exception types shared across the package."""


class PPFError(Exception):
    """Base class for all package errors."""


class IngestError(PPFError):
    """Malformed or inconsistent input data.

    Carries the 1-based line number of the offending record when the error
    originates from a file.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)


class NumericalError(PPFError):
    """Non-finite or otherwise unusable numerical result."""


class ConfigError(PPFError):
    """Invalid run configuration."""
