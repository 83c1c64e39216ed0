"""Exception hierarchy shared by the tracelink modules."""


class TracelinkError(Exception):
    """Base class for every error raised by tracelink."""


class ParseError(TracelinkError):
    """A Trace File could not be parsed.

    ``line`` is the 1-based line number of the offending line, or ``None``
    when the problem is not tied to a single line.
    """

    def __init__(self, message, line=None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MissingHeader(ParseError):
    pass


class UnknownColumn(ParseError):
    pass


class WrongColumnCount(ParseError):
    pass


class NonNumericField(ParseError):
    pass


class ZeroKeepUs(ParseError):
    pass


class ValueOverflow(ParseError):
    pass


class EmptyTimeline(TracelinkError):
    pass


class StageError(TracelinkError):
    """A stage change was refused."""


class IllegalTransition(StageError):
    pass


class NotReady(StageError):
    """An instance (or a syncgroup member) cannot start a replay.

    ``member`` names the first instance found unready.
    """

    def __init__(self, message, member=None):
        self.member = member
        super().__init__(message)


class WrongStage(StageError):
    """The operation is only permitted in another stage (e.g. ingest outside LOAD)."""


class AlreadyMember(TracelinkError):
    pass


class ScenarioError(TracelinkError):
    pass


class BindError(TracelinkError):
    pass
