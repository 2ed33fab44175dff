"""Exception hierarchy.

Everything raised on purpose derives from :class:`RegtraceError`.  The CLI
maps :class:`UsageError` to exit status 1 and :class:`DataError` to 2.
"""

from __future__ import annotations


class RegtraceError(Exception):
    pass


class UsageError(RegtraceError):
    """Bad flags or arguments."""


class DataError(RegtraceError):
    """Bad input data.  ``source`` and ``line`` locate it when known."""

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        self.message = message
        self.source = source
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        where = ""
        if self.source is not None:
            where = self.source
            if self.line is not None:
                where += f":{self.line}"
            where += ": "
        elif self.line is not None:
            where = f"line {self.line}: "
        return f"{where}{self.message}"


# -- log parsing ---------------------------------------------------------------

class ParseError(DataError):
    pass


class MalformedLine(ParseError):
    pass


class TruncatedSnapshot(ParseError):
    pass


class ValueOverflow(ParseError):
    pass


class IncompleteSnapshot(ParseError):
    pass


class IncompleteFirstSnapshot(IncompleteSnapshot):
    pass


# -- metadata / corpus ---------------------------------------------------------

class MetadataError(DataError):
    pass


class MissingCondition(MetadataError):
    pass


class InvalidVoltage(MetadataError):
    pass


class InvalidPulseWidth(MetadataError):
    pass


class DuplicateRunId(DataError):
    pass


class SchemaMismatch(DataError):
    pass


# -- graphs --------------------------------------------------------------------

class ModeMismatch(DataError):
    pass


class EdgeNotInGraph(DataError):
    pass


# -- statistics ----------------------------------------------------------------

class EmptyGroup(DataError):
    pass


class UnknownRegister(DataError):
    pass


class NoTransitions(DataError):
    pass


class MissingField(DataError):
    pass


# -- weights -------------------------------------------------------------------

class InvalidDelta(RegtraceError, ValueError):
    pass


class EmptyTrace(DataError):
    pass


class InsufficientLogs(DataError):
    pass
