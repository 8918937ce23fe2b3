from __future__ import annotations


class LCMError(Exception):
    """Base class for engine errors."""


class StoreError(LCMError):
    pass


class NotFoundError(StoreError):
    def __init__(self, identifier: str, what: str = "identifier") -> None:
        super().__init__(f"unknown {what}: {identifier!r}")
        self.identifier = identifier


class IntegrityError(StoreError):
    pass


class PatternError(LCMError):
    """Invalid regular expression; ``pos`` is the offset of the syntax error."""

    def __init__(self, pattern: str, message: str, pos: int | None) -> None:
        where = f" at position {pos}" if pos is not None else ""
        super().__init__(f"invalid pattern {pattern!r}{where}: {message}")
        self.pattern = pattern
        self.pos = pos


class ProviderError(LCMError):
    """Retriable failure from a text-generation backend."""


class ScriptError(LCMError):
    def __init__(self, path: str, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class ToolError(LCMError):
    """Model-visible tool failure; ingested as a tool message, never fatal."""


class SchemaError(LCMError):
    pass


class JobError(LCMError):
    pass


class TurnAborted(LCMError):
    """Provider failure mid-turn; everything ingested before it stays persisted."""
