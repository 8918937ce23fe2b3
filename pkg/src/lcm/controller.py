"""Active-context assembly and the soft/hard threshold control loop.

The active context is a list of entries stored alongside the log. Each entry
is a raw message, a file reference (the stub message of an oversized file),
or a summary node. Summaries always form a leading run. Compaction replaces
a block of the oldest entries with one summary entry, and the originals
stay in the store.

Above ``tau_soft`` a compaction is planned from a snapshot and summarized on
a worker thread. Its result is swapped in at the next turn boundary only if
the snapshotted block is still in place. Above ``tau_hard`` ingestion blocks
and compacts until the context fits again.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import IntegrityError
from .models import ActiveContext, ContextEntry, SummaryNode
from .provider import Provider
from .store import Store
from .summarizer import (
    MIN_BLOCK_TOKENS,
    TRUNCATE_BUDGET,
    Summarizer,
    deterministic_truncate,
    input_tokens,
    make_request,
)

log = logging.getLogger(__name__)

NONE, ASYNC, BLOCKING = "none", "async", "blocking"


@dataclass
class ControllerConfig:
    tau_soft: int = 100_000
    tau_hard: int = 150_000
    min_block_tokens: int = MIN_BLOCK_TOKENS
    block_target_fraction: float = 0.30
    # leading summaries needed before a compaction merges them into a condensed node
    condense_min_summaries: int = 2
    # make turn boundaries wait for an in-flight compaction (deterministic replays)
    wait_at_boundary: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.tau_soft < self.tau_hard:
            raise ValueError(f"need 0 < tau_soft < tau_hard, got {self.tau_soft}, {self.tau_hard}")
        if self.min_block_tokens < MIN_BLOCK_TOKENS:
            raise ValueError(f"min_block_tokens must be >= {MIN_BLOCK_TOKENS}")
        if not 0 < self.block_target_fraction <= 1:
            raise ValueError("block_target_fraction must be in (0, 1]")
        if self.condense_min_summaries < 1:
            raise ValueError("condense_min_summaries must be >= 1")


def regime_for(tokens: int, tau_soft: int, tau_hard: int) -> str:
    if tokens < tau_soft:
        return NONE
    if tokens < tau_hard:
        return ASYNC
    return BLOCKING


def annotation(node: SummaryNode) -> str:
    return f"[lcm:summary id={node.id} span={node.span[0]}..{node.span[1]} files={','.join(node.file_refs)}]"


def file_stub(file_id: str, path: str, tokens: int, exploration_summary: str) -> str:
    return f"[lcm:file id={file_id} path={path} tokens={tokens}]\n{exploration_summary}"


@dataclass(frozen=True)
class BlockPlan:
    block: tuple[ContextEntry, ...]

    @property
    def tokens(self) -> int:
        return sum(e.token_count for e in self.block)

    @property
    def summaries(self) -> tuple[ContextEntry, ...]:
        return tuple(e for e in self.block if e.kind == "summary")

    @property
    def raw(self) -> tuple[ContextEntry, ...]:
        return tuple(e for e in self.block if e.kind != "summary")


@dataclass(frozen=True)
class ComputedSummary:
    leaf_text: str | None
    leaf_level: str | None
    condensed_text: str | None
    condensed_level: str | None
    provider_calls: int


@dataclass
class _Pending:
    plan: BlockPlan
    future: Future[ComputedSummary]


class Controller:
    def __init__(
        self,
        store: Store,
        provider: Provider,
        config: ControllerConfig | None = None,
        summarizer: Summarizer | None = None,
        max_workers: int = 4,
    ) -> None:
        self.store = store
        self.config = config or ControllerConfig()
        self.tokenizer = store.tokenizer
        self.summarizer = summarizer or Summarizer(provider, self.tokenizer)
        self._pending: dict[str, _Pending] = {}
        self._lock = threading.Lock()
        self._turn_locks: dict[str, threading.RLock] = {}
        self._session_configs: dict[str, ControllerConfig] = {}
        self._max_workers = max_workers
        self._executor: ThreadPoolExecutor | None = None
        self.compactions = 0
        self.discarded = 0

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def configure(self, session_id: str, config: ControllerConfig) -> None:
        """Give one session its own thresholds (sub-agents need not share the root's)."""
        with self._lock:
            self._session_configs[session_id] = config

    def config_for(self, session_id: str) -> ControllerConfig:
        return self._session_configs.get(session_id, self.config)

    def _turn_lock(self, session_id: str) -> threading.RLock:
        with self._lock:
            return self._turn_locks.setdefault(session_id, threading.RLock())

    # -- reads ---------------------------------------------------------------

    def context(self, session_id: str) -> ActiveContext:
        return ActiveContext(session_id, self.store.context_entries(session_id))

    def tokens(self, session_id: str) -> int:
        return self.context(session_id).total_tokens

    def overhead_regime(self, session_id: str) -> str:
        cfg = self.config_for(session_id)
        return regime_for(self.tokens(session_id), cfg.tau_soft, cfg.tau_hard)

    def render_messages(self, session_id: str) -> list[dict[str, str]]:
        """One chat message per context entry; summaries and tool output go in as user turns."""
        out = []
        for entry in self.store.context_entries(session_id):
            if entry.kind == "summary":
                node = self.store.get_summary(entry.ref_id)
                out.append({"role": "user", "content": f"{node.text}\n{annotation(node)}"})
            elif entry.kind == "file_reference":
                f = self.store.get_file(entry.ref_id)
                m = self.store.get_message_by_seq(session_id, entry.lo)
                role = "assistant" if m.role == "assistant" else "user"
                out.append({"role": role, "content": file_stub(f.id, f.path, f.token_count, f.exploration_summary)})
            else:
                m = self.store.get_message(entry.ref_id)
                if m.role == "tool":
                    out.append({"role": "user", "content": f"[tool result]\n{m.content}"})
                else:
                    out.append({"role": m.role, "content": m.content})
        return out

    def render_context(self, session_id: str) -> str:
        parts = []
        for entry in self.store.context_entries(session_id):
            if entry.kind == "summary":
                node = self.store.get_summary(entry.ref_id)
                parts.append(f"{node.text}\n{annotation(node)}")
            elif entry.kind == "file_reference":
                f = self.store.get_file(entry.ref_id)
                parts.append(file_stub(f.id, f.path, f.token_count, f.exploration_summary))
            else:
                m = self.store.get_message(entry.ref_id)
                parts.append(f"{m.role}: {m.content}")
        return "\n\n".join(parts)

    def has_pending(self, session_id: str) -> bool:
        with self._lock:
            return session_id in self._pending

    # -- ingestion -------------------------------------------------------------

    def _append(self, session_id: str, role: str, content: str, file_refs: Sequence[str],
                file_id: str | None) -> ContextEntry:
        with self.store.transaction():
            msg = self.store.append_message(session_id, role, content, file_refs)
            if file_id is not None:
                self.store.mark_file_seen(file_id, msg.id)
                entry = ContextEntry("file_reference", file_id, msg.token_count, msg.seq, msg.seq)
            else:
                entry = ContextEntry("raw_message", msg.id, msg.token_count, msg.seq, msg.seq)
            return self.store.push_context_entry(session_id, entry)

    def ingest_item(
        self,
        session_id: str,
        role: str,
        content: str,
        file_refs: Sequence[str] = (),
        file_id: str | None = None,
    ) -> ActiveContext:
        """Persist, append to the context, then apply the soft and hard thresholds."""
        with self._turn_lock(session_id):
            refs = list(file_refs)
            if file_id is not None and file_id not in refs:
                refs.append(file_id)
            self._append(session_id, role, content, refs, file_id)
            self._after_ingest(session_id)
            return self.context(session_id)

    def ingest_many(self, session_id: str, items: Iterable[tuple[str, str]]) -> ActiveContext:
        """Persist a burst of (role, content) items, then run the control loop once."""
        with self._turn_lock(session_id):
            for role, content in items:
                self._append(session_id, role, content, (), None)
            self._after_ingest(session_id)
            return self.context(session_id)

    def _after_ingest(self, session_id: str) -> None:
        if self.tokens(session_id) > self.config_for(session_id).tau_soft:
            self.schedule_compaction(session_id)
        self.enforce_hard_limit(session_id)

    def enforce_hard_limit(self, session_id: str) -> int:
        """Block and compact oldest blocks until Tok(C) <= tau_hard; returns passes made."""
        passes = 0
        tau_hard = self.config_for(session_id).tau_hard
        while True:
            total = self.tokens(session_id)
            if total <= tau_hard:
                return passes
            node = self.compact_oldest_block(session_id, need=total - tau_hard)
            if node is None:
                log.warning("session %s stays at %d tokens > tau_hard: nothing left to compact",
                            session_id, total)
                return passes
            passes += 1

    # -- compaction -----------------------------------------------------------

    def plan_block(
        self, entries: Sequence[ContextEntry], need: int | None = None, config: ControllerConfig | None = None
    ) -> BlockPlan | None:
        """Pick the oldest compactable block; the newest entry is never included."""
        cfg = config or self.config
        if len(entries) < 2:
            return None
        total = sum(e.token_count for e in entries)
        candidates = entries[:-1]
        k = 0
        while k < len(candidates) and candidates[k].kind == "summary":
            k += 1
        target = math.ceil(cfg.block_target_fraction * total)
        if need is not None:
            target = min(target, need)
        target = max(target, cfg.min_block_tokens)
        starts = [0] if k >= cfg.condense_min_summaries else [k, 0]
        for start in dict.fromkeys(starts):
            block = list(candidates[start:k])
            acc = sum(e.token_count for e in block)
            for e in candidates[k:]:
                if acc >= target:
                    break
                block.append(e)
                acc += e.token_count
            n_summaries = sum(1 for e in block if e.kind == "summary")
            has_raw = len(block) > n_summaries
            if acc >= cfg.min_block_tokens and (has_raw or n_summaries >= 2):
                return BlockPlan(tuple(block))
        return None

    def _items_for_raw(self, session_id: str, raw: Sequence[ContextEntry]) -> list[str]:
        msgs = self.store.messages_in_span(session_id, raw[0].lo, raw[-1].hi)
        return [f"[{m.role} #{m.seq}] {m.content}" for m in msgs]

    def _items_for_summaries(self, entries: Sequence[ContextEntry]) -> list[str]:
        out = []
        for e in entries:
            node = self.store.get_summary(e.ref_id)
            out.append(f"{node.text}\n{annotation(node)}")
        return out

    def _summarize(self, items: Sequence[str]) -> tuple[str, str, int]:
        if input_tokens(items, self.tokenizer) > TRUNCATE_BUDGET:
            res = self.summarizer.escalate(make_request(items, tokenizer=self.tokenizer))
            return res.text, res.level_used, res.provider_calls
        # small intermediate leaf inside a condensed block: no model call needed
        return deterministic_truncate(items, TRUNCATE_BUDGET, self.tokenizer), "truncate", 0

    def summarize_plan(self, session_id: str, plan: BlockPlan) -> ComputedSummary:
        """Produce summary texts for ``plan``; provider calls only, no writes."""
        calls = 0
        leaf_text = leaf_level = cond_text = cond_level = None
        final_items: list[str] = []
        if plan.raw:
            final_items = self._items_for_raw(session_id, plan.raw)
            leaf_text, leaf_level, n = self._summarize(final_items)
            calls += n
        if plan.summaries:
            final_items = self._items_for_summaries(plan.summaries)
            if leaf_text is not None:
                final_items.append(leaf_text)
            cond_text, cond_level, n = self._summarize(final_items)
            calls += n
        final = cond_text if cond_text is not None else leaf_text
        assert final is not None
        if self.tokenizer.count(final) >= plan.tokens:
            # guarantees strict reduction of Tok(C): plan.tokens >= min_block_tokens > TRUNCATE_BUDGET
            final = deterministic_truncate(final_items, TRUNCATE_BUDGET, self.tokenizer)
            if cond_text is not None:
                cond_text, cond_level = final, "truncate"
            else:
                leaf_text, leaf_level = final, "truncate"
        return ComputedSummary(leaf_text, leaf_level, cond_text, cond_level, calls)

    def apply_plan(self, session_id: str, plan: BlockPlan, computed: ComputedSummary) -> SummaryNode:
        """Persist the nodes and swap them in atomically; IntegrityError if the block moved."""
        with self.store.transaction():
            leaf = None
            if plan.raw:
                leaf = self.store.create_summary(
                    session_id, "leaf", (plan.raw[0].lo, plan.raw[-1].hi), computed.leaf_text, computed.leaf_level
                )
            if plan.summaries:
                children = [e.ref_id for e in plan.summaries] + ([leaf.id] if leaf else [])
                node = self.store.create_summary(
                    session_id, "condensed", children, computed.condensed_text, computed.condensed_level
                )
            else:
                assert leaf is not None
                node = leaf
            self.store.replace_context_block(
                session_id,
                plan.block,
                ContextEntry("summary", node.id, node.token_count, plan.block[0].lo, plan.block[-1].hi),
            )
        self.compactions += 1
        return node

    def compact_oldest_block(self, session_id: str, need: int | None = None) -> SummaryNode | None:
        """Synchronous compaction of the oldest block; None when no block qualifies."""
        with self._turn_lock(session_id):
            plan = self.plan_block(self.store.context_entries(session_id), need, self.config_for(session_id))
            if plan is None:
                return None
            computed = self.summarize_plan(session_id, plan)
            return self.apply_plan(session_id, plan, computed)

    # -- asynchronous compaction ----------------------------------------------

    def schedule_compaction(self, session_id: str) -> bool:
        """Start a background compaction from a snapshot; at most one per session."""
        with self._lock:
            if session_id in self._pending:
                return False
            entries = self.store.context_entries(session_id)
            total = sum(e.token_count for e in entries)
            cfg = self.config_for(session_id)
            plan = self.plan_block(entries, max(1, total - cfg.tau_soft), cfg)
            if plan is None:
                return False
            if self._executor is None:
                self._executor = ThreadPoolExecutor(self._max_workers, thread_name_prefix="lcm-compact")
            future = self._executor.submit(self.summarize_plan, session_id, plan)
            self._pending[session_id] = _Pending(plan, future)
            return True

    def swap_pending(self, session_id: str, wait: bool | None = None) -> SummaryNode | None:
        """Turn-boundary swap of a finished background compaction (discarded if stale)."""
        wait = self.config_for(session_id).wait_at_boundary if wait is None else wait
        with self._lock:
            pending = self._pending.get(session_id)
            if pending is None or (not wait and not pending.future.done()):
                return None
            del self._pending[session_id]
        try:
            computed = pending.future.result()
        except Exception as exc:  # provider trouble is contained by escalation; anything else is logged
            log.error("background compaction for %s failed: %s", session_id, exc)
            return None
        with self._turn_lock(session_id):
            try:
                return self.apply_plan(session_id, pending.plan, computed)
            except IntegrityError:
                self.discarded += 1
                log.info("discarding stale compaction for %s", session_id)
                return None

    def between_turns(self, session_id: str) -> SummaryNode | None:
        node = self.swap_pending(session_id)
        if self.tokens(session_id) > self.config_for(session_id).tau_soft:
            self.schedule_compaction(session_id)
        return node

    def drain(self, session_id: str, max_rounds: int = 10_000) -> int:
        """Finish background work and keep compacting until Tok(C) <= tau_soft (tests, tooling)."""
        rounds = 0
        while rounds < max_rounds:
            self.swap_pending(session_id, wait=True)
            if self.tokens(session_id) <= self.config_for(session_id).tau_soft or not self.schedule_compaction(session_id):
                break
            rounds += 1
        return rounds

    # -- invariants -------------------------------------------------------------

    def covered_seqs(self, entry: ContextEntry) -> list[int]:
        if entry.kind == "summary":
            seqs: list[int] = []
            for leaf in self.store.leaves_under(entry.ref_id):
                seqs.extend(range(leaf.span[0], leaf.span[1] + 1))
            return seqs
        return [entry.lo]

    def coverage_problems(self, session_id: str) -> list[str]:
        """Check the context partitions the session's messages, in order, with consistent tokens."""
        problems = []
        entries = self.store.context_entries(session_id)
        seen: list[int] = []
        seen_summary_after_raw = False
        raw_seen = False
        for e in entries:
            if e.kind == "summary":
                if raw_seen:
                    seen_summary_after_raw = True
                node = self.store.get_summary(e.ref_id)
                if node.token_count != e.token_count:
                    problems.append(f"entry {e.ref_id}: cached tokens {e.token_count} != {node.token_count}")
            else:
                raw_seen = True
                msg = self.store.get_message_by_seq(session_id, e.lo)
                if e.kind == "raw_message" and msg.id != e.ref_id:
                    problems.append(f"entry {e.ref_id}: seq {e.lo} resolves to {msg.id}")
                if e.kind == "file_reference" and e.ref_id not in msg.file_refs:
                    problems.append(f"file entry {e.ref_id}: stub message lacks the file id")
                if msg.token_count != e.token_count:
                    problems.append(f"entry {e.ref_id}: cached tokens {e.token_count} != {msg.token_count}")
            seen.extend(self.covered_seqs(e))
        if seen_summary_after_raw:
            problems.append("a summary entry follows a raw entry")
        expected = list(range(1, self.store.max_seq(session_id) + 1))
        if seen != expected:
            dup = len(seen) - len(set(seen))
            missing = len(set(expected) - set(seen))
            problems.append(f"coverage is not an ordered partition (duplicates={dup}, missing={missing})")
        return problems

