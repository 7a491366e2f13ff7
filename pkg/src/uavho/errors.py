"""Exception hierarchy shared by all modules."""


class UavhoError(Exception):
    pass


class InvalidArgument(UavhoError, ValueError):
    pass


class NotFound(UavhoError, LookupError):
    pass


class OutOfBounds(UavhoError, ValueError):
    pass


class ConfigError(UavhoError, ValueError):
    """Bad configuration; the message starts with the offending field path."""


class ContractViolation(UavhoError, RuntimeError):
    pass


class TrainingDivergence(UavhoError, ArithmeticError):
    pass


class UnsupportedArchitecture(UavhoError, TypeError):
    pass


class ParseError(UavhoError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
