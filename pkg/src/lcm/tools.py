"""Model-facing memory tools: lcm_grep, lcm_describe, lcm_expand."""

from __future__ import annotations

from dataclasses import dataclass, field

from .controller import annotation
from .errors import NotFoundError, StoreError, ToolError
from .models import MessageRecord, SessionRecord, SummaryNode
from .store import Store, compile_pattern
from .tokenizer import Tokenizer, get_default_tokenizer

PAGE_SIZE = 20
EXCERPT_TOKENS = 200

EXPAND_RESTRICTION = (
    "lcm_expand is restricted to sub-agents spawned via the Task tool; the main agent cannot call it "
    "directly. Delegate the expansion to a sub-agent and ask it for the relevant findings."
)


@dataclass(frozen=True)
class GrepMatch:
    session_id: str
    seq: int
    role: str
    excerpt: str
    covering_summary_id: str | None  # None = live (never compacted)


@dataclass
class GrepPage:
    matches: list[GrepMatch]
    page: int
    page_size: int
    total_matches: int

    @property
    def pages(self) -> int:
        return max(1, -(-self.total_matches // self.page_size))

    def render(self) -> str:
        if not self.total_matches:
            return "no matches"
        lines = [f"{self.total_matches} matches, page {self.page}/{self.pages}"]
        current: tuple[str, str | None] | None = None
        for m in self.matches:
            group = (m.session_id, m.covering_summary_id)
            if group != current:
                current = group
                label = m.covering_summary_id or "live (uncompacted)"
                lines.append(f"== {label} [{m.session_id}]")
            lines.append(f"#{m.seq} {m.role}: {m.excerpt}")
        return "\n".join(lines)


@dataclass
class ExpandResult:
    summary_id: str
    kind: str
    messages: list[MessageRecord] = field(default_factory=list)
    children: list[SummaryNode] = field(default_factory=list)

    def render(self) -> str:
        if self.kind == "leaf":
            return "\n\n".join(f"[{m.role} #{m.seq}]\n{m.content}" for m in self.messages)
        return "\n\n".join(f"{c.text}\n{annotation(c)}" for c in self.children)


def clip_excerpt(content: str, start: int, end: int, budget: int, tokenizer: Tokenizer) -> str:
    """Window of ``content`` around [start, end) within ``budget`` tokens, ellipses included."""
    if tokenizer.count(content) <= budget:
        return content
    inner = max(1, budget - 2)
    centre = (start + end) // 2
    lo, hi = 0, len(content)
    while lo < hi:
        w = (lo + hi + 1) // 2
        if tokenizer.count(content[max(0, centre - w): centre + w]) <= inner:
            lo = w
        else:
            hi = w - 1
    a, b = max(0, centre - lo), min(len(content), centre + lo)
    return ("…" if a > 0 else "") + content[a:b] + ("…" if b < len(content) else "")


class MemoryTools:
    def __init__(self, store: Store, page_size: int = PAGE_SIZE, excerpt_tokens: int = EXCERPT_TOKENS,
                 tokenizer: Tokenizer | None = None) -> None:
        self.store = store
        self.page_size = page_size
        self.excerpt_tokens = excerpt_tokens
        self.tokenizer = tokenizer or store.tokenizer or get_default_tokenizer()

    def search(self, session_id: str, pattern: str, summary_id: str | None = None) -> list[GrepMatch]:
        """Every match across the session family, ordered by session, covering summary, then seq."""
        regex = compile_pattern(pattern)
        family = self.store.family(session_id)
        if summary_id is not None:
            try:
                scope = self.store.get_summary(summary_id)
            except NotFoundError:
                raise ToolError(f"unknown summary id: {summary_id}") from None
            if scope.session_id not in family:
                raise ToolError(f"summary {summary_id} is outside this session family")
            family = [scope.session_id]
        out: list[tuple[tuple[int, float, int], GrepMatch]] = []
        for rank, sid in enumerate(family):
            for msg, leaf in self.store.search_messages(sid, pattern, summary_id):
                m = regex.search(msg.content)
                start, end = (m.start(), m.end()) if m else (0, 0)
                excerpt = clip_excerpt(msg.content, start, end, self.excerpt_tokens, self.tokenizer)
                group = self.store.get_summary(leaf).span[0] if leaf else float("inf")
                out.append(((rank, group, msg.seq), GrepMatch(sid, msg.seq, msg.role, excerpt, leaf)))
        out.sort(key=lambda t: t[0])
        return [m for _, m in out]

    def lcm_grep(self, session_id: str, pattern: str, summary_id: str | None = None, page: int = 1,
                 page_size: int | None = None) -> GrepPage:
        size = page_size or self.page_size
        if page < 1:
            raise ToolError("page numbers start at 1")
        matches = self.search(session_id, pattern, summary_id)
        return GrepPage(matches[(page - 1) * size: page * size], page, size, len(matches))

    def lcm_describe(self, identifier: str) -> str:
        try:
            d = self.store.describe(identifier)
        except NotFoundError:
            raise ToolError(f"unknown identifier: {identifier}") from None
        except StoreError as exc:
            raise ToolError(str(exc)) from None
        if d["type"] == "file":
            return (
                f"file {d['id']}\npath: {d['path']}\ntype: {d['mime_kind']}\ntokens: {d['token_count']}\n"
                f"sha256: {d['content_hash']}\nexploration summary:\n{d['exploration_summary']}"
            )
        if d["kind"] == "leaf":
            children = f"messages {d['span'][0]}..{d['span'][1]}"
        else:
            children = ", ".join(d["children"])
        return (
            f"summary {d['id']} ({d['kind']})\ntokens: {d['token_count']}\n"
            f"covers: {d['span'][0]}..{d['span'][1]}\nchildren: {children}\n"
            f"parents: {', '.join(d['parents']) or '(none)'}\nfiles: {', '.join(d['file_refs']) or '(none)'}\n"
            f"level: {d['level_used']}\n\n{d['text']}"
        )

    def lcm_expand(self, caller: SessionRecord, summary_id: str) -> ExpandResult:
        if caller.depth < 1 and caller.agent_kind != "map_item":
            raise ToolError(EXPAND_RESTRICTION)
        try:
            node = self.store.get_summary(summary_id)
        except NotFoundError:
            raise ToolError(f"unknown summary id: {summary_id}") from None
        if node.session_id not in self.store.family(caller.id):
            raise ToolError(f"summary {summary_id} is outside this session family")
        if node.kind == "leaf":
            return ExpandResult(node.id, "leaf", messages=self.store.messages_in_span(node.session_id, *node.span))
        return ExpandResult(node.id, "condensed", children=[self.store.get_summary(c) for c in node.child_ids])
