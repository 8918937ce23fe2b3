"""Read-only inspection of a session: losslessness round trip, DAG shape, DOT export."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import mean

from .models import MessageRecord
from .store import Store


def recover_messages(store: Store, session_id: str) -> list[MessageRecord]:
    """Walk the active context down to verbatim messages (summaries expand to their leaves)."""
    out: list[MessageRecord] = []
    for entry in store.context_entries(session_id):
        if entry.kind == "summary":
            for leaf in store.leaves_under(entry.ref_id):
                out.extend(store.messages_in_span(leaf.session_id, *leaf.span))
        else:
            out.append(store.get_message_by_seq(session_id, entry.lo))
    return out


def roundtrip_problems(store: Store, session_id: str) -> list[str]:
    expected = store.messages(session_id)
    got = recover_messages(store, session_id)
    if [m.id for m in got] == [m.id for m in expected]:
        bad = [m.seq for m, g in zip(expected, got) if m.content.encode() != g.content.encode()]
        return [f"content mismatch at seq {s}" for s in bad]
    have = {m.seq for m in got}
    missing = [m.seq for m in expected if m.seq not in have]
    return [f"recovered {len(got)} messages, store has {len(expected)}; missing seqs {missing[:20]}"]


@dataclass(frozen=True)
class DagStats:
    summaries: int
    leaves: int
    condensed: int
    depth: int
    max_fanout: int
    mean_fanout: float


def dag_depth(store: Store, summary_id: str, memo: dict[str, int] | None = None) -> int:
    memo = {} if memo is None else memo
    if summary_id not in memo:
        node = store.get_summary(summary_id)
        memo[summary_id] = 1 if node.kind == "leaf" else 1 + max(dag_depth(store, c, memo) for c in node.child_ids)
    return memo[summary_id]


def dag_stats(store: Store, session_id: str) -> DagStats:
    nodes = store.summaries(session_id)
    condensed = [n for n in nodes if n.kind == "condensed"]
    memo: dict[str, int] = {}
    depth = max((dag_depth(store, n.id, memo) for n in nodes), default=0)
    fanouts = [len(n.child_ids) for n in condensed]
    return DagStats(len(nodes), len(nodes) - len(condensed), len(condensed), depth,
                    max(fanouts, default=0), round(mean(fanouts), 2) if fanouts else 0.0)


def dag_signature(store: Store, session_id: str) -> tuple:
    """Id-free structure of the session DAG and context, for comparing replays."""
    nodes = store.summaries(session_id)
    index = {n.id: i for i, n in enumerate(nodes)}
    shape = tuple(
        (n.kind, n.span, tuple(index[c] for c in n.child_ids), n.level_used, n.token_count, len(n.file_refs))
        for n in nodes
    )
    context = tuple(
        (e.kind, index.get(e.ref_id, -1), e.lo, e.hi, e.token_count) for e in store.context_entries(session_id)
    )
    return shape, context


def to_dot(store: Store, session_id: str) -> str:
    lines = [f'digraph "{session_id}" {{', "  rankdir=TB;", "  node [shape=box, fontname=monospace];"]
    active = {e.ref_id for e in store.context_entries(session_id) if e.kind == "summary"}
    for n in store.summaries(session_id):
        style = ", style=bold" if n.id in active else ""
        label = f"{n.id}\\n{n.kind} {n.span[0]}..{n.span[1]}\\n{n.token_count} tok ({n.level_used})"
        lines.append(f'  "{n.id}" [label="{label}"{style}];')
        if n.kind == "leaf":
            span = f"msgs_{n.span[0]}_{n.span[1]}"
            lines.append(f'  "{span}" [label="messages {n.span[0]}..{n.span[1]}", shape=note];')
            lines.append(f'  "{n.id}" -> "{span}";')
        for c in n.child_ids:
            lines.append(f'  "{n.id}" -> "{c}";')
    lines.append("}")
    return "\n".join(lines)


def render_tree(store: Store, session_id: str) -> str:
    lines: list[str] = []

    def walk(sid: str, indent: int) -> None:
        n = store.get_summary(sid)
        files = f" files={','.join(n.file_refs)}" if n.file_refs else ""
        lines.append(f"{'  ' * indent}{n.id} {n.kind} {n.span[0]}..{n.span[1]} {n.token_count}t {n.level_used}{files}")
        for c in n.child_ids:
            walk(c, indent + 1)

    for e in store.context_entries(session_id):
        if e.kind == "summary":
            walk(e.ref_id, 0)
        else:
            lines.append(f"{e.kind} seq {e.lo} {e.token_count}t")
    return "\n".join(lines)
