"""Immutable message log, summary DAG and file registry on SQLite.

One connection is shared by every thread and guarded by a re-entrant lock;
``transaction()`` nests, and only the outermost level commits. Messages,
summaries and summary edges are protected by triggers, so the append-only
property holds even against raw SQL.
"""

from __future__ import annotations

import bisect
import json
import re
import sqlite3
import threading
import time
from contextlib import contextmanager
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterator, Sequence

from . import ids
from .errors import IntegrityError, NotFoundError, PatternError, StoreError
from .models import (
    AGENT_KINDS,
    LEVELS,
    MIME_KINDS,
    ROLES,
    ContextEntry,
    FileRecord,
    MessageRecord,
    SessionRecord,
    SummaryNode,
)
from .tokenizer import Tokenizer, get_default_tokenizer

SCHEMA = """
CREATE TABLE IF NOT EXISTS sessions (
    id TEXT PRIMARY KEY,
    parent_id TEXT REFERENCES sessions(id),
    root_id TEXT NOT NULL,
    depth INTEGER NOT NULL,
    agent_kind TEXT NOT NULL,
    read_only INTEGER NOT NULL DEFAULT 0,
    created_at REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS sessions_root ON sessions(root_id);

CREATE TABLE IF NOT EXISTS messages (
    id TEXT PRIMARY KEY,
    session_id TEXT NOT NULL REFERENCES sessions(id),
    seq INTEGER NOT NULL,
    role TEXT NOT NULL CHECK (role IN ('user', 'assistant', 'tool')),
    content TEXT NOT NULL,
    token_count INTEGER NOT NULL CHECK (token_count >= 0),
    file_refs TEXT NOT NULL,
    created_at REAL NOT NULL,
    UNIQUE (session_id, seq)
);

CREATE TABLE IF NOT EXISTS summaries (
    id TEXT PRIMARY KEY,
    session_id TEXT NOT NULL REFERENCES sessions(id),
    kind TEXT NOT NULL CHECK (kind IN ('leaf', 'condensed')),
    text TEXT NOT NULL,
    token_count INTEGER NOT NULL,
    span_lo INTEGER NOT NULL,
    span_hi INTEGER NOT NULL,
    file_refs TEXT NOT NULL,
    level_used TEXT NOT NULL,
    created_at REAL NOT NULL,
    CHECK (span_lo <= span_hi)
);
CREATE INDEX IF NOT EXISTS summaries_session ON summaries(session_id);

CREATE TABLE IF NOT EXISTS summary_children (
    parent_id TEXT NOT NULL REFERENCES summaries(id),
    position INTEGER NOT NULL,
    child_id TEXT NOT NULL REFERENCES summaries(id),
    PRIMARY KEY (parent_id, position)
);
CREATE INDEX IF NOT EXISTS summary_children_child ON summary_children(child_id);

CREATE TABLE IF NOT EXISTS files (
    id TEXT PRIMARY KEY,
    path TEXT NOT NULL,
    mime_kind TEXT NOT NULL,
    token_count INTEGER NOT NULL,
    exploration_summary TEXT NOT NULL,
    content_hash TEXT NOT NULL,
    structure TEXT,
    first_seen_message TEXT REFERENCES messages(id),
    created_at REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS files_path ON files(path, content_hash);

CREATE TABLE IF NOT EXISTS context_entries (
    session_id TEXT NOT NULL REFERENCES sessions(id),
    position INTEGER NOT NULL,
    kind TEXT NOT NULL,
    ref_id TEXT NOT NULL,
    token_count INTEGER NOT NULL,
    lo INTEGER NOT NULL,
    hi INTEGER NOT NULL,
    PRIMARY KEY (session_id, position)
);

CREATE TABLE IF NOT EXISTS map_jobs (
    id TEXT PRIMARY KEY,
    session_id TEXT REFERENCES sessions(id),
    mode TEXT NOT NULL,
    input_path TEXT NOT NULL,
    output_path TEXT NOT NULL,
    prompt TEXT NOT NULL,
    output_schema TEXT NOT NULL,
    concurrency INTEGER NOT NULL CHECK (concurrency >= 1),
    retry_limit INTEGER NOT NULL CHECK (retry_limit >= 1),
    read_only INTEGER NOT NULL,
    status TEXT NOT NULL,
    item_count INTEGER NOT NULL,
    output_file_id TEXT,
    created_at REAL NOT NULL
);

CREATE TABLE IF NOT EXISTS map_items (
    job_id TEXT NOT NULL REFERENCES map_jobs(id),
    idx INTEGER NOT NULL,
    input TEXT NOT NULL,
    state TEXT NOT NULL CHECK (state IN ('pending', 'running', 'ok', 'error')),
    attempts INTEGER NOT NULL DEFAULT 0,
    output TEXT,
    error TEXT,
    claim_token TEXT,
    claimed_at REAL,
    agent_session_id TEXT,
    PRIMARY KEY (job_id, idx)
);
CREATE INDEX IF NOT EXISTS map_items_state ON map_items(job_id, state, idx);

CREATE TABLE IF NOT EXISTS map_item_messages (
    job_id TEXT NOT NULL,
    idx INTEGER NOT NULL,
    n INTEGER NOT NULL,
    role TEXT NOT NULL,
    content TEXT NOT NULL,
    PRIMARY KEY (job_id, idx, n)
);

CREATE TABLE IF NOT EXISTS map_claims (
    job_id TEXT NOT NULL,
    idx INTEGER NOT NULL,
    claim_token TEXT NOT NULL,
    worker_id TEXT NOT NULL,
    claimed_at REAL NOT NULL,
    released_at REAL
);

CREATE TRIGGER IF NOT EXISTS messages_no_update BEFORE UPDATE ON messages
BEGIN SELECT RAISE(ABORT, 'messages are append-only'); END;
CREATE TRIGGER IF NOT EXISTS messages_no_delete BEFORE DELETE ON messages
BEGIN SELECT RAISE(ABORT, 'messages are append-only'); END;
CREATE TRIGGER IF NOT EXISTS summaries_no_update BEFORE UPDATE ON summaries
BEGIN SELECT RAISE(ABORT, 'summaries are immutable'); END;
CREATE TRIGGER IF NOT EXISTS summaries_no_delete BEFORE DELETE ON summaries
BEGIN SELECT RAISE(ABORT, 'summaries are immutable'); END;
CREATE TRIGGER IF NOT EXISTS edges_no_update BEFORE UPDATE ON summary_children
BEGIN SELECT RAISE(ABORT, 'summary edges are immutable'); END;
CREATE TRIGGER IF NOT EXISTS edges_no_delete BEFORE DELETE ON summary_children
BEGIN SELECT RAISE(ABORT, 'summary edges are immutable'); END;
"""


@lru_cache(maxsize=256)
def _compile(pattern: str) -> re.Pattern[str]:
    return re.compile(pattern)


def compile_pattern(pattern: str) -> re.Pattern[str]:
    try:
        return _compile(pattern)
    except re.error as exc:
        raise PatternError(pattern, exc.msg, exc.pos) from None


def _regexp(pattern: str, value: str | None) -> bool:
    return value is not None and _compile(pattern).search(value) is not None


def _refs(raw: str) -> tuple[str, ...]:
    return tuple(json.loads(raw))


class Store:
    """Transactional store shared by the controller, map engine and tools."""

    def __init__(self, path: str | Path = ":memory:", tokenizer: Tokenizer | None = None) -> None:
        self.path = str(path)
        self.tokenizer = tokenizer or get_default_tokenizer()
        self._lock = threading.RLock()
        self._depth = 0
        self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._conn.create_function("regexp", 2, _regexp, deterministic=True)
        self._conn.execute("PRAGMA foreign_keys = ON")
        if self.path != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
            self._conn.execute("PRAGMA synchronous = FULL")
        self._conn.executescript(SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- low level ---------------------------------------------------------

    @contextmanager
    def transaction(self) -> Iterator[sqlite3.Connection]:
        with self._lock:
            outer = self._depth == 0
            if outer:
                self._conn.execute("BEGIN IMMEDIATE")
            self._depth += 1
            try:
                yield self._conn
            except BaseException:
                self._depth -= 1
                if outer:
                    self._conn.execute("ROLLBACK")
                raise
            else:
                self._depth -= 1
                if outer:
                    self._conn.execute("COMMIT")

    def query(self, sql: str, params: Sequence[Any] = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def query_one(self, sql: str, params: Sequence[Any] = ()) -> sqlite3.Row | None:
        with self._lock:
            return self._conn.execute(sql, params).fetchone()

    def execute(self, sql: str, params: Sequence[Any] = ()) -> int:
        """Run one write statement in its own (or the enclosing) transaction; returns rowcount."""
        with self.transaction() as conn:
            return conn.execute(sql, params).rowcount

    # -- sessions ----------------------------------------------------------

    def create_session(
        self,
        parent_id: str | None = None,
        agent_kind: str = "root",
        session_id: str | None = None,
        read_only: bool = False,
    ) -> SessionRecord:
        if agent_kind not in AGENT_KINDS:
            raise StoreError(f"invalid agent kind {agent_kind!r}")
        sid = session_id or ids.new_id("session")
        now = time.time()
        with self.transaction() as conn:
            if parent_id is None:
                depth, root = 0, sid
            else:
                parent = self.get_session(parent_id)
                depth = parent.depth + 1
                root = conn.execute("SELECT root_id FROM sessions WHERE id = ?", (parent_id,)).fetchone()[0]
            conn.execute(
                "INSERT INTO sessions VALUES (?, ?, ?, ?, ?, ?, ?)",
                (sid, parent_id, root, depth, agent_kind, int(read_only), now),
            )
        return SessionRecord(sid, parent_id, depth, agent_kind, now, read_only)

    def get_session(self, session_id: str) -> SessionRecord:
        row = self.query_one("SELECT * FROM sessions WHERE id = ?", (session_id,))
        if row is None:
            raise NotFoundError(session_id, "session")
        return self._session(row)

    @staticmethod
    def _session(row: sqlite3.Row) -> SessionRecord:
        return SessionRecord(row["id"], row["parent_id"], row["depth"], row["agent_kind"], row["created_at"],
                             bool(row["read_only"]))

    def has_session(self, session_id: str) -> bool:
        return self.query_one("SELECT 1 FROM sessions WHERE id = ?", (session_id,)) is not None

    def ensure_session(self, session_id: str) -> SessionRecord:
        with self.transaction():
            if self.has_session(session_id):
                return self.get_session(session_id)
            return self.create_session(session_id=session_id)

    def list_sessions(self, root_id: str | None = None) -> list[SessionRecord]:
        if root_id is None:
            rows = self.query("SELECT * FROM sessions ORDER BY created_at, id")
        else:
            rows = self.query("SELECT * FROM sessions WHERE root_id = ? ORDER BY created_at, id", (root_id,))
        return [self._session(r) for r in rows]

    def family(self, session_id: str) -> list[str]:
        """Every session sharing ``session_id``'s root, root first."""
        row = self.query_one("SELECT root_id FROM sessions WHERE id = ?", (session_id,))
        if row is None:
            raise NotFoundError(session_id, "session")
        rows = self.query(
            "SELECT id FROM sessions WHERE root_id = ? ORDER BY depth, created_at, id", (row[0],)
        )
        return [r[0] for r in rows]

    # -- messages ----------------------------------------------------------

    def append_message(
        self,
        session_id: str,
        role: str,
        content: str,
        file_refs: Sequence[str] = (),
    ) -> MessageRecord:
        if role not in ROLES:
            raise StoreError(f"invalid role {role!r}; expected one of {ROLES}")
        if not isinstance(content, str):
            raise StoreError("content must be text")
        refs = tuple(dict.fromkeys(file_refs))
        tokens = self.tokenizer.count(content)
        mid = ids.new_id("message")
        now = time.time()
        with self.transaction() as conn:
            if not self.has_session(session_id):
                self.create_session(session_id=session_id)
            for fid in refs:
                if conn.execute("SELECT 1 FROM files WHERE id = ?", (fid,)).fetchone() is None:
                    raise IntegrityError(f"message references unknown file {fid!r}")
            seq = conn.execute(
                "SELECT COALESCE(MAX(seq), 0) + 1 FROM messages WHERE session_id = ?", (session_id,)
            ).fetchone()[0]
            conn.execute(
                "INSERT INTO messages VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (mid, session_id, seq, role, content, tokens, json.dumps(list(refs)), now),
            )
        return MessageRecord(mid, session_id, seq, role, content, tokens, refs, now)

    @staticmethod
    def _message(row: sqlite3.Row) -> MessageRecord:
        return MessageRecord(
            row["id"], row["session_id"], row["seq"], row["role"], row["content"],
            row["token_count"], _refs(row["file_refs"]), row["created_at"],
        )

    def get_message(self, message_id: str) -> MessageRecord:
        row = self.query_one("SELECT * FROM messages WHERE id = ?", (message_id,))
        if row is None:
            raise NotFoundError(message_id, "message")
        return self._message(row)

    def get_message_by_seq(self, session_id: str, seq: int) -> MessageRecord:
        row = self.query_one("SELECT * FROM messages WHERE session_id = ? AND seq = ?", (session_id, seq))
        if row is None:
            raise NotFoundError(f"{session_id}#{seq}", "message")
        return self._message(row)

    def messages_in_span(self, session_id: str, lo: int, hi: int) -> list[MessageRecord]:
        rows = self.query(
            "SELECT * FROM messages WHERE session_id = ? AND seq BETWEEN ? AND ? ORDER BY seq",
            (session_id, lo, hi),
        )
        return [self._message(r) for r in rows]

    def messages(self, session_id: str) -> list[MessageRecord]:
        rows = self.query("SELECT * FROM messages WHERE session_id = ? ORDER BY seq", (session_id,))
        return [self._message(r) for r in rows]

    def max_seq(self, session_id: str) -> int:
        row = self.query_one("SELECT COALESCE(MAX(seq), 0) FROM messages WHERE session_id = ?", (session_id,))
        return row[0]

    # -- summaries ---------------------------------------------------------

    def create_summary(
        self,
        session_id: str,
        kind: str,
        children: tuple[int, int] | Sequence[str],
        text: str,
        level_used: str = "normal",
    ) -> SummaryNode:
        """Persist a leaf (``children`` = (lo, hi) seq span) or condensed node (child ids)."""
        if level_used not in LEVELS:
            raise StoreError(f"invalid level {level_used!r}")
        sid = ids.new_id("summary")
        now = time.time()
        tokens = self.tokenizer.count(text)
        with self.transaction() as conn:
            if not self.has_session(session_id):
                raise NotFoundError(session_id, "session")
            if kind == "leaf":
                lo, hi = children  # type: ignore[misc]
                if not (isinstance(lo, int) and isinstance(hi, int)) or lo < 1 or hi < lo:
                    raise IntegrityError(f"invalid leaf span {children!r}")
                if hi > self.max_seq(session_id):
                    raise IntegrityError(f"leaf span {lo}..{hi} exceeds stored messages")
                refs: set[str] = set()
                for (raw,) in conn.execute(
                    "SELECT file_refs FROM messages WHERE session_id = ? AND seq BETWEEN ? AND ?",
                    (session_id, lo, hi),
                ):
                    refs.update(json.loads(raw))
                child_ids: tuple[str, ...] = ()
            elif kind == "condensed":
                child_ids = tuple(children)  # type: ignore[arg-type]
                if len(child_ids) < 2:
                    raise IntegrityError("a condensed summary needs at least two children")
                if len(set(child_ids)) != len(child_ids):
                    raise IntegrityError("duplicate child in condensed summary")
                nodes = [self.get_summary(c) for c in child_ids]  # NotFoundError on dangling
                leaf_spans = sorted(n.span for n in nodes if n.kind == "leaf")
                for a, b in zip(leaf_spans, leaf_spans[1:]):
                    if b[0] <= a[1]:
                        raise IntegrityError(f"sibling leaf spans overlap: {a} and {b}")
                if any(n.session_id != session_id for n in nodes):
                    raise IntegrityError("condensed children must belong to the same session")
                lo = min(n.span[0] for n in nodes)
                hi = max(n.span[1] for n in nodes)
                refs = set().union(*(n.file_refs for n in nodes))
            else:
                raise StoreError(f"invalid summary kind {kind!r}")
            file_refs = tuple(sorted(refs))
            conn.execute(
                "INSERT INTO summaries VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (sid, session_id, kind, text, tokens, lo, hi, json.dumps(list(file_refs)), level_used, now),
            )
            conn.executemany(
                "INSERT INTO summary_children VALUES (?, ?, ?)",
                [(sid, i, c) for i, c in enumerate(child_ids)],
            )
        return SummaryNode(sid, session_id, kind, text, tokens, (lo, hi), child_ids, file_refs, level_used, now)

    def _summary(self, row: sqlite3.Row) -> SummaryNode:
        child_ids: tuple[str, ...] = ()
        if row["kind"] == "condensed":
            child_ids = tuple(
                r[0]
                for r in self.query(
                    "SELECT child_id FROM summary_children WHERE parent_id = ? ORDER BY position", (row["id"],)
                )
            )
        return SummaryNode(
            row["id"], row["session_id"], row["kind"], row["text"], row["token_count"],
            (row["span_lo"], row["span_hi"]), child_ids, _refs(row["file_refs"]),
            row["level_used"], row["created_at"],
        )

    def get_summary(self, summary_id: str) -> SummaryNode:
        row = self.query_one("SELECT * FROM summaries WHERE id = ?", (summary_id,))
        if row is None:
            raise NotFoundError(summary_id, "summary")
        return self._summary(row)

    def summaries(self, session_id: str) -> list[SummaryNode]:
        rows = self.query("SELECT * FROM summaries WHERE session_id = ? ORDER BY id", (session_id,))
        return [self._summary(r) for r in rows]

    def summary_parents(self, summary_id: str) -> list[str]:
        return [r[0] for r in self.query(
            "SELECT parent_id FROM summary_children WHERE child_id = ? ORDER BY parent_id", (summary_id,)
        )]

    def resolve_children(self, summary_id: str) -> list[MessageRecord | SummaryNode]:
        node = self.get_summary(summary_id)
        if node.kind == "leaf":
            return list(self.messages_in_span(node.session_id, *node.span))
        return [self.get_summary(c) for c in node.child_ids]

    def leaves_under(self, summary_id: str) -> list[SummaryNode]:
        """Leaves reachable from ``summary_id`` in left-to-right order."""
        out: list[SummaryNode] = []
        stack = [self.get_summary(summary_id)]
        while stack:
            node = stack.pop()
            if node.kind == "leaf":
                out.append(node)
            else:
                stack.extend(self.get_summary(c) for c in reversed(node.child_ids))
        return out

    # -- files -------------------------------------------------------------

    def register_file(
        self,
        path: str,
        mime_kind: str,
        token_count: int,
        exploration_summary: str,
        content_hash: str = "",
        structure: dict[str, Any] | None = None,
        first_seen_message: str | None = None,
    ) -> FileRecord:
        if mime_kind not in MIME_KINDS:
            raise StoreError(f"invalid mime kind {mime_kind!r}")
        fid = ids.new_id("file")
        self.execute(
            "INSERT INTO files VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
            (fid, str(path), mime_kind, token_count, exploration_summary, content_hash,
             json.dumps(structure) if structure is not None else None, first_seen_message, time.time()),
        )
        return FileRecord(fid, str(path), mime_kind, token_count, exploration_summary, content_hash,
                          first_seen_message, structure)

    def _file(self, row: sqlite3.Row) -> FileRecord:
        return FileRecord(
            row["id"], row["path"], row["mime_kind"], row["token_count"], row["exploration_summary"],
            row["content_hash"], row["first_seen_message"],
            json.loads(row["structure"]) if row["structure"] else None,
        )

    def get_file(self, file_id: str) -> FileRecord:
        row = self.query_one("SELECT * FROM files WHERE id = ?", (file_id,))
        if row is None:
            raise NotFoundError(file_id, "file")
        return self._file(row)

    def find_file(self, path: str, content_hash: str) -> FileRecord | None:
        row = self.query_one(
            "SELECT * FROM files WHERE path = ? AND content_hash = ? ORDER BY id LIMIT 1", (str(path), content_hash)
        )
        return self._file(row) if row else None

    def mark_file_seen(self, file_id: str, message_id: str) -> None:
        self.execute(
            "UPDATE files SET first_seen_message = ? WHERE id = ? AND first_seen_message IS NULL",
            (message_id, file_id),
        )

    # -- active context ----------------------------------------------------

    def context_entries(self, session_id: str) -> list[ContextEntry]:
        rows = self.query(
            "SELECT * FROM context_entries WHERE session_id = ? ORDER BY position", (session_id,)
        )
        return [ContextEntry(r["kind"], r["ref_id"], r["token_count"], r["lo"], r["hi"], r["position"]) for r in rows]

    def push_context_entry(self, session_id: str, entry: ContextEntry) -> ContextEntry:
        with self.transaction() as conn:
            pos = conn.execute(
                "SELECT COALESCE(MAX(position), -1) + 1 FROM context_entries WHERE session_id = ?", (session_id,)
            ).fetchone()[0]
            conn.execute(
                "INSERT INTO context_entries VALUES (?, ?, ?, ?, ?, ?, ?)",
                (session_id, pos, entry.kind, entry.ref_id, entry.token_count, entry.lo, entry.hi),
            )
        return ContextEntry(entry.kind, entry.ref_id, entry.token_count, entry.lo, entry.hi, pos)

    def replace_context_block(
        self, session_id: str, block: Sequence[ContextEntry], replacement: ContextEntry
    ) -> ContextEntry:
        """Swap ``block`` (consecutive entries) for one entry; fails if the block changed."""
        with self.transaction() as conn:
            current = {e.position: e for e in self.context_entries(session_id)}
            for e in block:
                cur = current.get(e.position)
                if cur is None or cur.ref_id != e.ref_id or cur.kind != e.kind:
                    raise IntegrityError("context block changed since snapshot")
            conn.executemany(
                "DELETE FROM context_entries WHERE session_id = ? AND position = ?",
                [(session_id, e.position) for e in block],
            )
            pos = block[0].position
            conn.execute(
                "INSERT INTO context_entries VALUES (?, ?, ?, ?, ?, ?, ?)",
                (session_id, pos, replacement.kind, replacement.ref_id, replacement.token_count,
                 replacement.lo, replacement.hi),
            )
        return ContextEntry(replacement.kind, replacement.ref_id, replacement.token_count,
                            replacement.lo, replacement.hi, pos)

    def covering_leaves(self, session_id: str) -> list[tuple[int, int, str]]:
        """Sorted (lo, hi, leaf_id) for every leaf referenced by the session's active context."""
        spans: list[tuple[int, int, str]] = []
        for entry in self.context_entries(session_id):
            if entry.kind == "summary":
                spans.extend((leaf.span[0], leaf.span[1], leaf.id) for leaf in self.leaves_under(entry.ref_id))
        spans.sort()
        return spans

    # -- search ------------------------------------------------------------

    def search_messages(
        self, session_id: str, pattern: str, scope_summary_id: str | None = None
    ) -> list[tuple[MessageRecord, str | None]]:
        """Regex search over every stored message of the session, compacted or not.

        Each hit carries the id of the context leaf covering it, or ``None`` when live.
        """
        compile_pattern(pattern)
        rows = self.query(
            "SELECT * FROM messages WHERE session_id = ? AND content REGEXP ? ORDER BY seq",
            (session_id, pattern),
        )
        hits = [self._message(r) for r in rows]
        if scope_summary_id is not None:
            scope = self.get_summary(scope_summary_id)
            if scope.session_id != session_id:
                return []
            spans = [leaf.span for leaf in self.leaves_under(scope_summary_id)]
            hits = [m for m in hits if any(lo <= m.seq <= hi for lo, hi in spans)]
        covering = self.covering_leaves(session_id)
        starts = [c[0] for c in covering]
        out: list[tuple[MessageRecord, str | None]] = []
        for m in hits:
            i = bisect.bisect_right(starts, m.seq) - 1
            leaf = covering[i][2] if i >= 0 and covering[i][0] <= m.seq <= covering[i][1] else None
            out.append((m, leaf))
        return out

    # -- describe ----------------------------------------------------------

    def describe(self, identifier: str) -> dict[str, Any]:
        kind = ids.kind_of(identifier)
        if kind == "file":
            f = self.get_file(identifier)
            return {
                "type": "file",
                "id": f.id,
                "path": f.path,
                "mime_kind": f.mime_kind,
                "token_count": f.token_count,
                "content_hash": f.content_hash,
                "exploration_summary": f.exploration_summary,
            }
        if kind == "summary":
            s = self.get_summary(identifier)
            return {
                "type": "summary",
                "id": s.id,
                "kind": s.kind,
                "token_count": s.token_count,
                "span": list(s.span),
                "children": list(s.span) if s.kind == "leaf" else list(s.child_ids),
                "parents": self.summary_parents(s.id),
                "file_refs": list(s.file_refs),
                "level_used": s.level_used,
                "text": s.text,
            }
        if kind is None:
            raise NotFoundError(identifier)
        raise StoreError(f"describe accepts only file or summary ids, got a {kind} id: {identifier!r}")

    # -- integrity ---------------------------------------------------------

    def validate_dag(self, session_id: str | None = None) -> list[str]:
        """Full-graph check: dangling references, cycles, spans, file-ref propagation."""
        problems: list[str] = []
        where, params = ("WHERE session_id = ?", (session_id,)) if session_id else ("", ())
        rows = self.query(f"SELECT * FROM summaries {where}", params)
        nodes = {r["id"]: self._summary(r) for r in rows}
        all_ids = {r[0] for r in self.query("SELECT id FROM summaries")}
        for node in nodes.values():
            if node.kind == "leaf":
                lo, hi = node.span
                msgs = self.messages_in_span(node.session_id, lo, hi)
                if len(msgs) != hi - lo + 1:
                    problems.append(f"{node.id}: span {lo}..{hi} has missing messages")
                expected = set().union(*(m.file_refs for m in msgs)) if msgs else set()
            else:
                if len(node.child_ids) < 2:
                    problems.append(f"{node.id}: condensed node with {len(node.child_ids)} children")
                expected = set()
                for c in node.child_ids:
                    if c not in all_ids:
                        problems.append(f"{node.id}: dangling child {c}")
                        continue
                    child = nodes.get(c) or self.get_summary(c)
                    if c >= node.id:  # ids are time-sortable
                        problems.append(f"{node.id}: child {c} is newer than its parent")
                    expected |= set(child.file_refs)
            if set(node.file_refs) != expected:
                problems.append(f"{node.id}: file_refs {sorted(node.file_refs)} != {sorted(expected)}")
        # cycle detection (iterative DFS, white/grey/black)
        colour: dict[str, int] = {}
        for start in nodes:
            if colour.get(start):
                continue
            stack = [(start, iter(nodes[start].child_ids))]
            colour[start] = 1
            while stack:
                nid, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    colour[nid] = 2
                    stack.pop()
                    continue
                if nxt not in nodes:
                    continue
                c = colour.get(nxt, 0)
                if c == 1:
                    problems.append(f"cycle through {nxt}")
                elif c == 0:
                    colour[nxt] = 1
                    stack.append((nxt, iter(nodes[nxt].child_ids)))
        return problems
