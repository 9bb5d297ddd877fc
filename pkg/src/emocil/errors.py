"""Exception hierarchy shared by every emocil module."""


class EmocilError(Exception):
    """Base class for all package errors."""


class ContractViolation(EmocilError, ValueError):
    """A caller broke an operation's precondition (shape, finiteness, ...)."""


class SingularCovarianceError(EmocilError, ArithmeticError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class InsufficientDataError(EmocilError, ValueError):
    def __init__(self, message, class_id=None):
        super().__init__(message)
        self.class_id = class_id


class ScheduleError(EmocilError, ValueError):
    """Unknown task, malformed schedule or duplicated class."""


class DuplicateTaskError(ScheduleError):
    pass


class TaskUnknownError(ScheduleError, KeyError):
    pass


class EmptyModelError(EmocilError, RuntimeError):
    pass


class SchemaError(EmocilError, ValueError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class LabeledRowError(EmocilError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class CannotSplitError(EmocilError, ValueError):
    pass


class ModelFormatError(EmocilError, ValueError):
    """Model file could not be parsed; ``offset`` is the byte position when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IncompatibleVersionError(ModelFormatError):
    pass


class ReportError(EmocilError, ValueError):
    pass
