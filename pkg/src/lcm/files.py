"""Oversized-file interception and type-aware exploration summaries.

Content above the threshold never enters the store. It is kept by path, and a
stub message carrying the file id goes into the context instead.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
import sqlite3
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .controller import Controller, file_stub
from .errors import ProviderError
from .models import ContextEntry, FileRecord
from .provider import CompletionRequest, Provider
from .summarizer import deterministic_truncate, load_prompt
from .tokenizer import Tokenizer, clip_prefix, get_default_tokenizer

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 25_000
SUMMARY_CAP = 1_024
CSV_SAMPLE_ROWS = 1_000
TEXT_EXCERPT_TOKENS = 8_000

EXTENSIONS = {
    ".json": "json", ".jsonl": "json", ".ndjson": "json", ".geojson": "json",
    ".csv": "csv", ".tsv": "csv",
    ".sql": "sql", ".sqlite": "sql", ".sqlite3": "sql", ".db": "sql",
    ".py": "code", ".pyi": "code", ".js": "code", ".jsx": "code", ".ts": "code", ".tsx": "code",
    ".go": "code", ".rs": "code", ".java": "code", ".kt": "code", ".c": "code", ".h": "code",
    ".cc": "code", ".cpp": "code", ".hpp": "code", ".cs": "code", ".rb": "code", ".php": "code",
    ".swift": "code", ".scala": "code", ".sh": "code", ".lua": "code",
    ".txt": "text", ".md": "text", ".rst": "text", ".log": "text",
    ".png": "binary", ".jpg": "binary", ".jpeg": "binary", ".gif": "binary", ".pdf": "binary",
    ".zip": "binary", ".gz": "binary", ".tar": "binary", ".bin": "binary", ".so": "binary",
    ".exe": "binary", ".whl": "binary", ".parquet": "binary",
}

MAGIC = (
    (b"SQLite format 3\x00", "sql"),
    (b"\x89PNG", "binary"),
    (b"%PDF", "binary"),
    (b"PK\x03\x04", "binary"),
    (b"\x1f\x8b", "binary"),
    (b"\x7fELF", "binary"),
    (b"GIF8", "binary"),
    (b"\xff\xd8\xff", "binary"),
)

SQLITE_MAGIC = b"SQLite format 3\x00"


@dataclass
class ExplorationReport:
    mime_kind: str
    summary: str
    structure: dict[str, Any] | None = field(default=None)


def sniff_kind(path: str | Path, head: bytes | None = None) -> str:
    """Extension first; magic bytes decide for unknown extensions and disguised binaries."""
    path = Path(path)
    if head is None:
        with open(path, "rb") as fh:
            head = fh.read(4096)
    for magic, kind in MAGIC:
        if head.startswith(magic):
            return kind
    by_ext = EXTENSIONS.get(path.suffix.lower())
    if by_ext == "sql" and path.suffix.lower() in (".sqlite", ".sqlite3", ".db"):
        return "binary"  # claims to be a database but lacks the header
    if by_ext is not None:
        return by_ext
    if b"\x00" in head:
        return "binary"
    try:
        head.decode("utf-8")
    except UnicodeDecodeError as exc:
        if exc.start < len(head) - 4:  # a cut multi-byte char at the end is fine
            return "binary"
    return "text"


def _type_name(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    return "object"


def _infer_cell(value: str) -> str:
    v = value.strip()
    if v == "":
        return "empty"
    if v.lower() in ("true", "false"):
        return "boolean"
    try:
        int(v)
        return "integer"
    except ValueError:
        pass
    try:
        float(v)
        return "number"
    except ValueError:
        return "string"


def _merge_types(types: set[str]) -> str:
    types = types - {"empty"}
    if not types:
        return "empty"
    if types == {"integer", "number"}:
        return "number"
    if len(types) == 1:
        return next(iter(types))
    return "mixed(" + ",".join(sorted(types)) + ")"


def explore_json(text: str) -> ExplorationReport:
    try:
        data = json.loads(text)
        records = None
    except json.JSONDecodeError:
        # JSON Lines
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    return ExplorationReport("json", f"malformed JSON (line {lineno}: {exc.msg})",
                                             {"valid": False})
        data = records
    if isinstance(data, dict):
        keys = {k: _type_name(v) for k, v in data.items()}
        structure: dict[str, Any] = {"top_level": "object", "keys": keys}
        lines = [f"JSON object with {len(keys)} keys:"]
        lines += [f"  {k}: {t}" for k, t in list(keys.items())[:200]]
    elif isinstance(data, list):
        elem_types = sorted({_type_name(v) for v in data})
        key_types: dict[str, set[str]] = {}
        for v in data[:CSV_SAMPLE_ROWS]:
            if isinstance(v, dict):
                for k, x in v.items():
                    key_types.setdefault(k, set()).add(_type_name(x))
        structure = {
            "top_level": "jsonl" if records is not None else "array",
            "length": len(data),
            "element_types": elem_types,
            "keys": {k: sorted(t) for k, t in key_types.items()},
        }
        label = "JSON Lines file" if records is not None else "JSON array"
        lines = [f"{label} with {len(data)} elements of type {', '.join(elem_types) or 'none'}."]
        if key_types:
            lines.append("Element keys (sampled):")
            lines += [f"  {k}: {'|'.join(sorted(t))}" for k, t in list(key_types.items())[:200]]
    else:
        structure = {"top_level": _type_name(data)}
        lines = [f"JSON scalar of type {_type_name(data)}."]
    return ExplorationReport("json", "\n".join(lines), structure)


def explore_csv(text: str, path: str | Path = "") -> ExplorationReport:
    delimiter = "\t" if str(path).lower().endswith(".tsv") else ","
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = next(reader, None)
    if header is None:
        return ExplorationReport("csv", "empty CSV file", {"columns": [], "rows": 0})
    seen: list[set[str]] = [set() for _ in header]
    rows = 0
    for row in reader:
        if not row:
            continue
        if rows < CSV_SAMPLE_ROWS:
            for i, cell in enumerate(row[: len(header)]):
                seen[i].add(_infer_cell(cell))
        rows += 1
    types = {name: _merge_types(t) for name, t in zip(header, seen)}
    structure = {"columns": header, "rows": rows, "types": types}
    lines = [f"CSV with {len(header)} columns and {rows} rows (types sampled from first {min(rows, CSV_SAMPLE_ROWS)}):"]
    lines += [f"  {name}: {t}" for name, t in types.items()]
    return ExplorationReport("csv", "\n".join(lines), structure)


_CREATE_TABLE = re.compile(r"CREATE\s+TABLE\s+(?:IF\s+NOT\s+EXISTS\s+)?[`\"\[]?(\w+)[`\"\]]?\s*\((.*?)\);",
                           re.IGNORECASE | re.DOTALL)
_INSERT = re.compile(r"INSERT\s+INTO\s+[`\"\[]?(\w+)", re.IGNORECASE)


def explore_sqlite(path: str | Path) -> ExplorationReport:
    conn = sqlite3.connect(f"file:{Path(path).resolve()}?mode=ro", uri=True)
    try:
        tables = {}
        for (name,) in conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        ):
            cols = [(r[1], r[2] or "") for r in conn.execute(f'PRAGMA table_info("{name}")')]
            count = conn.execute(f'SELECT COUNT(*) FROM "{name}"').fetchone()[0]
            tables[name] = {"columns": {c: t for c, t in cols}, "rows": count}
    finally:
        conn.close()
    lines = [f"SQLite database with {len(tables)} tables:"]
    for name, info in tables.items():
        cols = ", ".join(f"{c} {t}".strip() for c, t in info["columns"].items())
        lines.append(f"  {name} ({info['rows']} rows): {cols}")
    return ExplorationReport("sql", "\n".join(lines), {"tables": tables})


def explore_sql_script(text: str) -> ExplorationReport:
    tables = {}
    for name, body in _CREATE_TABLE.findall(text):
        cols = []
        for part in body.split(","):
            word = part.strip().split()
            if word and word[0].upper() not in ("PRIMARY", "FOREIGN", "UNIQUE", "CHECK", "CONSTRAINT"):
                cols.append(word[0].strip('`"[]'))
        tables[name] = {"columns": cols}
    inserts: dict[str, int] = {}
    for name in _INSERT.findall(text):
        inserts[name] = inserts.get(name, 0) + 1
    lines = [f"SQL script defining {len(tables)} tables:"]
    lines += [f"  {n}: {', '.join(t['columns'])}" for n, t in tables.items()]
    if inserts:
        lines.append("INSERT statements: " + ", ".join(f"{n}={c}" for n, c in sorted(inserts.items())))
    return ExplorationReport("sql", "\n".join(lines), {"tables": tables, "inserts": inserts})


SIGNATURE_PATTERNS = (
    re.compile(r"^(\s*)((?:async\s+)?def\s+\w+\s*\(.*?\).*?):?\s*$"),
    re.compile(r"^(\s*)(class\s+\w+.*?):?\s*$"),
    re.compile(r"^(\s*)((?:export\s+)?(?:default\s+)?(?:async\s+)?function\*?\s+\w+\s*\(.*?\))"),
    re.compile(r"^(\s*)((?:export\s+)?(?:abstract\s+)?(?:class|interface)\s+\w+)"),
    re.compile(r"^(\s*)((?:pub(?:\(\w+\))?\s+)?(?:async\s+)?fn\s+\w+\s*(?:<.*?>)?\s*\(.*?\).*?)\s*\{?\s*$"),
    re.compile(r"^(\s*)((?:pub\s+)?(?:struct|enum|trait|impl)\b.*?)\s*\{?\s*$"),
    re.compile(r"^(\s*)(func\s+(?:\(.*?\)\s*)?\w+\s*\(.*?\).*?)\s*\{?\s*$"),
)


def explore_code(text: str) -> ExplorationReport:
    signatures = []
    for lineno, line in enumerate(text.splitlines(), 1):
        for pat in SIGNATURE_PATTERNS:
            m = pat.match(line)
            if m:
                indent = len(m.group(1).expandtabs(4))
                signatures.append({"line": lineno, "indent": indent, "signature": m.group(2).rstrip(" :{")})
                break
    n_lines = text.count("\n") + (0 if text.endswith("\n") or not text else 1)
    top = [s for s in signatures if s["indent"] == 0]
    lines = [f"Source file, {n_lines} lines, {len(top)} top-level definitions, {len(signatures)} total:"]
    lines += [f"  {'  ' * (s['indent'] // 4)}{s['signature']}  (line {s['line']})" for s in signatures[:300]]
    return ExplorationReport("code", "\n".join(lines), {"lines": n_lines, "signatures": signatures})


def explore_binary(path: str | Path, size: int, head: bytes) -> ExplorationReport:
    magic = head[:8].hex()
    return ExplorationReport("binary", f"binary file, {size} bytes, leading bytes {magic}",
                             {"size": size, "magic": magic})


def explore(
    path: str | Path,
    mime_kind: str | None = None,
    provider: Provider | None = None,
    tokenizer: Tokenizer | None = None,
    cap: int = SUMMARY_CAP,
) -> ExplorationReport:
    """Dispatch on ``mime_kind`` (sniffed when None); the summary is capped at ``cap`` tokens."""
    tok = tokenizer or get_default_tokenizer()
    path = Path(path)
    raw = path.read_bytes()
    kind = mime_kind or sniff_kind(path, raw[:4096])
    if not raw:
        return ExplorationReport(kind, "empty file, 0 tokens", {"size": 0})
    if kind == "binary":
        report = explore_binary(path, len(raw), raw[:16])
    elif kind == "sql" and raw.startswith(SQLITE_MAGIC):
        try:
            report = explore_sqlite(path)
        except sqlite3.DatabaseError:
            report = explore_binary(path, len(raw), raw[:16])
    else:
        text = raw.decode("utf-8", errors="replace")
        if kind == "json":
            report = explore_json(text)
        elif kind == "csv":
            report = explore_csv(text, path)
        elif kind == "sql":
            report = explore_sql_script(text)
        elif kind == "code":
            report = explore_code(text)
        else:
            report = _explore_text(text, provider, tok, cap)
    report.summary = clip_prefix(report.summary, cap, tok) if tok.count(report.summary) > cap else report.summary
    return report


def _explore_text(text: str, provider: Provider | None, tok: Tokenizer, cap: int) -> ExplorationReport:
    n_lines = text.count("\n") + 1
    header = f"Text file, {n_lines} lines, {tok.count(text)} tokens."
    summary = None
    if provider is not None:
        excerpt = deterministic_truncate([text], TEXT_EXCERPT_TOKENS, tok)
        system = load_prompt("explore_text").format(target_tokens=cap)
        request = CompletionRequest(
            "explore_text",
            ({"role": "system", "content": system}, {"role": "user", "content": excerpt}),
            max_tokens=cap,
        )
        try:
            summary = provider.complete(request).text
        except ProviderError as exc:
            log.warning("text exploration failed, falling back to truncation: %s", exc)
    if summary is None:
        summary = deterministic_truncate([text], max(1, cap - tok.count(header) - 1), tok)
        strategy = "truncate"
    else:
        strategy = "llm"
    return ExplorationReport("text", f"{header}\n{summary}", {"lines": n_lines, "strategy": strategy})


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class FileGateway:
    """Decides per tool result whether it is inlined or stored by reference."""

    def __init__(
        self,
        controller: Controller,
        provider: Provider | None = None,
        threshold: int = DEFAULT_THRESHOLD,
        spill_dir: str | Path | None = None,
        summary_cap: int = SUMMARY_CAP,
    ) -> None:
        self.controller = controller
        self.store = controller.store
        self.tokenizer = controller.store.tokenizer
        self.provider = provider
        self.threshold = threshold
        self.summary_cap = summary_cap
        self._spill_dir = Path(spill_dir) if spill_dir else None

    @property
    def spill_dir(self) -> Path:
        if self._spill_dir is None:
            self._spill_dir = Path(tempfile.mkdtemp(prefix="lcm-spill-"))
        self._spill_dir.mkdir(parents=True, exist_ok=True)
        return self._spill_dir

    def register(self, path: str | Path, mime_kind: str | None = None) -> FileRecord:
        """Explore ``path`` once and record it; same path and content reuse the record."""
        path = Path(path)
        digest = file_hash(path)
        existing = self.store.find_file(str(path), digest)
        if existing is not None:
            return existing
        report = explore(path, mime_kind, self.provider, self.tokenizer, self.summary_cap)
        tokens = self.tokenizer.count(path.read_bytes().decode("utf-8", errors="replace"))
        return self.store.register_file(
            str(path), report.mime_kind, tokens, report.summary, digest, report.structure
        )

    def _spill(self, session_id: str, text: str) -> Path:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
        path = self.spill_dir / f"{session_id}-{digest}.txt"
        if not path.exists():
            path.write_text(text, encoding="utf-8")
        return path

    def intercept(self, source: str | Path, session_id: str, role: str = "tool") -> ContextEntry:
        """Ingest a tool result (text, or a path given as ``Path``) and return its context entry."""
        if isinstance(source, Path):
            try:
                data = source.read_bytes()
            except OSError as exc:
                self.controller.ingest_item(session_id, role, f"error: cannot read {source}: {exc.strerror or exc}")
                return self.store.context_entries(session_id)[-1]
            text = data.decode("utf-8", errors="replace")
            path: Path | None = source
            binary = sniff_kind(source, data[:4096]) == "binary"
        else:
            text, path, binary = source, None, False
        if not binary and self.tokenizer.count(text) <= self.threshold:
            self.controller.ingest_item(session_id, role, text)
        else:
            record = self.register(path if path is not None else self._spill(session_id, text))
            stub = file_stub(record.id, record.path, record.token_count, record.exploration_summary)
            self.controller.ingest_item(session_id, role, stub, file_id=record.id)
        return self.store.context_entries(session_id)[-1]
