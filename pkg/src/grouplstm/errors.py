"""Exception hierarchy shared by every module."""


class GroupLSTMError(Exception):
    pass


class DimensionError(GroupLSTMError, ValueError):
    pass


class InputError(GroupLSTMError, ValueError):
    pass


class EmptySceneError(InputError):
    pass


class ConfigError(GroupLSTMError, ValueError):
    pass


class DivergenceError(GroupLSTMError, ArithmeticError):
    """A loss, gradient or activation became NaN or infinite."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(InputError):
    pass


class SplitError(InputError):
    pass
