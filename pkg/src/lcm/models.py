"""Record types shared across the engine. All are frozen snapshots of store rows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

ROLES = ("user", "assistant", "tool")
SUMMARY_KINDS = ("leaf", "condensed")
LEVELS = ("normal", "aggressive", "truncate")
MIME_KINDS = ("json", "csv", "sql", "code", "text", "binary")
AGENT_KINDS = ("root", "general", "read_only_explorer", "map_item")
ENTRY_KINDS = ("raw_message", "summary", "file_reference")


@dataclass(frozen=True)
class SessionRecord:
    id: str
    parent_id: str | None
    depth: int
    agent_kind: str
    created_at: float
    read_only: bool = False


@dataclass(frozen=True)
class MessageRecord:
    id: str
    session_id: str
    seq: int
    role: str
    content: str
    token_count: int
    file_refs: tuple[str, ...]
    created_at: float


@dataclass(frozen=True)
class SummaryNode:
    id: str
    session_id: str
    kind: str
    text: str
    token_count: int
    # (lo, hi) seq extent covered; for a leaf this is exactly its span.
    span: tuple[int, int]
    # Condensed children in stored order; empty for leaves.
    child_ids: tuple[str, ...]
    file_refs: tuple[str, ...]
    level_used: str
    created_at: float

    @property
    def children(self) -> tuple[int, int] | tuple[str, ...]:
        return self.span if self.kind == "leaf" else self.child_ids


@dataclass(frozen=True)
class FileRecord:
    id: str
    path: str
    mime_kind: str
    token_count: int
    exploration_summary: str
    content_hash: str
    first_seen_message: str | None
    structure: dict[str, Any] | None = None


@dataclass(frozen=True)
class ContextEntry:
    kind: str
    ref_id: str
    token_count: int
    # Seq extent of the session messages this entry covers.
    lo: int
    hi: int
    position: int = 0


@dataclass
class ActiveContext:
    session_id: str
    entries: list[ContextEntry] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(e.token_count for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)
