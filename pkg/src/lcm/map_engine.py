"""Database-backed ``llm_map`` / ``agentic_map`` execution.

Items are claimed with a compare-and-set (pending -> running + claim token).
Every later write for the item is fenced on that token, so a worker whose
lease expired can no longer touch the item. Provider failures and schema
violations draw on the same attempt budget.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import ids
from .errors import JobError, ProviderError, SchemaError
from .provider import CompletionRequest, Provider
from .schema import check_schema, iter_errors
from .store import Store

log = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 16
DEFAULT_RETRIES = 3
LEASE_SECONDS = 300.0
CORRECTION = (
    "Your previous response failed validation: {error}. Respond again with only a value matching the schema."
)


@dataclass
class MapJobSpec:
    mode: str
    input_path: str | Path
    output_path: str | Path
    prompt: str
    output_schema: dict[str, Any] | bool
    concurrency: int = DEFAULT_CONCURRENCY
    retry_limit: int = DEFAULT_RETRIES
    read_only: bool = False
    session_id: str | None = None


@dataclass(frozen=True)
class MapJob:
    id: str
    session_id: str | None
    mode: str
    input_path: str
    output_path: str
    prompt: str
    output_schema: Any
    concurrency: int
    retry_limit: int
    read_only: bool
    status: str
    item_count: int
    output_file_id: str | None


@dataclass(frozen=True)
class MapItem:
    job_id: str
    index: int
    input: Any
    state: str
    attempts: int
    output: Any
    error: str | None
    claim_token: str | None
    agent_session_id: str | None


@dataclass(frozen=True)
class SummaryHandle:
    job_id: str
    counts: dict[str, int]
    output_path: str
    registered_file_id: str | None

    def render(self) -> str:
        fid = f" (file {self.registered_file_id})" if self.registered_file_id else ""
        return (
            f"map job {self.job_id} finished: {self.counts['ok']} ok, {self.counts['error']} error; "
            f"results in {self.output_path}{fid}"
        )


@dataclass(frozen=True)
class StepResult:
    index: int
    state: str
    attempts: int


# (job, item, user_message, agent_session_id or None) -> (reply text, agent_session_id)
AgentRunner = Callable[[MapJob, MapItem, str, "str | None"], "tuple[str, str]"]

_FENCE = re.compile(r"^```(?:json)?\s*\n(.*?)\n```\s*$", re.DOTALL)


def parse_reply(text: str) -> Any:
    body = text.strip()
    m = _FENCE.match(body)
    if m:
        body = m.group(1)
    return json.loads(body)


def read_jsonl(path: str | Path) -> list[Any]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                items.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise JobError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
    return items


class MapEngine:
    def __init__(
        self,
        store: Store,
        provider: Provider,
        register_output: Callable[[Path], str] | None = None,
        agent_runner: AgentRunner | None = None,
        lease_seconds: float = LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.store = store
        self.provider = provider
        self.register_output = register_output
        self.agent_runner = agent_runner
        self.lease_seconds = lease_seconds
        self.clock = clock

    # -- records ---------------------------------------------------------------

    def job(self, job_id: str) -> MapJob:
        r = self.store.query_one("SELECT * FROM map_jobs WHERE id = ?", (job_id,))
        if r is None:
            raise JobError(f"unknown job {job_id!r}")
        return MapJob(r["id"], r["session_id"], r["mode"], r["input_path"], r["output_path"], r["prompt"],
                      json.loads(r["output_schema"]), r["concurrency"], r["retry_limit"], bool(r["read_only"]),
                      r["status"], r["item_count"], r["output_file_id"])

    @staticmethod
    def _item(r: Any) -> MapItem:
        return MapItem(r["job_id"], r["idx"], json.loads(r["input"]), r["state"], r["attempts"],
                       json.loads(r["output"]) if r["output"] is not None else None, r["error"],
                       r["claim_token"], r["agent_session_id"])

    def items(self, job_id: str) -> list[MapItem]:
        return [self._item(r) for r in self.store.query(
            "SELECT * FROM map_items WHERE job_id = ? ORDER BY idx", (job_id,))]

    def item(self, job_id: str, index: int) -> MapItem:
        r = self.store.query_one("SELECT * FROM map_items WHERE job_id = ? AND idx = ?", (job_id, index))
        if r is None:
            raise JobError(f"job {job_id} has no item {index}")
        return self._item(r)

    def item_conversation(self, job_id: str, index: int) -> list[dict[str, str]]:
        rows = self.store.query(
            "SELECT role, content FROM map_item_messages WHERE job_id = ? AND idx = ? ORDER BY n", (job_id, index)
        )
        return [{"role": r["role"], "content": r["content"]} for r in rows]

    def claims(self, job_id: str) -> list[tuple[int, str, str]]:
        return [(r["idx"], r["claim_token"], r["worker_id"]) for r in self.store.query(
            "SELECT idx, claim_token, worker_id FROM map_claims WHERE job_id = ? ORDER BY rowid", (job_id,))]

    # -- submission ------------------------------------------------------------

    def submit_map_job(self, spec: MapJobSpec) -> MapJob:
        if spec.mode not in ("llm", "agentic"):
            raise JobError(f"mode must be 'llm' or 'agentic', got {spec.mode!r}")
        if spec.concurrency < 1 or spec.retry_limit < 1:
            raise JobError("concurrency and retry_limit must be >= 1")
        if spec.mode == "agentic" and self.agent_runner is None:
            raise JobError("agentic mode needs an agent runner")
        try:
            check_schema(spec.output_schema)
        except SchemaError as exc:
            raise JobError(f"invalid output schema: {exc}") from None
        try:
            inputs = read_jsonl(spec.input_path)
        except OSError as exc:
            raise JobError(f"cannot read {spec.input_path}: {exc.strerror or exc}") from None
        job_id = ids.new_id("job")
        with self.store.transaction() as conn:
            conn.execute(
                "INSERT INTO map_jobs VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (job_id, spec.session_id, spec.mode, str(spec.input_path), str(spec.output_path), spec.prompt,
                 json.dumps(spec.output_schema), spec.concurrency, spec.retry_limit, int(spec.read_only),
                 "created", len(inputs), None, time.time()),
            )
            conn.executemany(
                "INSERT INTO map_items (job_id, idx, input, state) VALUES (?, ?, ?, 'pending')",
                [(job_id, i, json.dumps(x)) for i, x in enumerate(inputs)],
            )
        return self.job(job_id)

    # -- execution ----------------------------------------------------------------

    def _claim(self, job_id: str, worker_id: str) -> tuple[MapJob, MapItem, str] | None:
        token = uuid.uuid4().hex
        now = self.clock()
        stale = now - self.lease_seconds
        with self.store.transaction() as conn:
            status = conn.execute("SELECT status FROM map_jobs WHERE id = ?", (job_id,)).fetchone()
            if status is None or status[0] not in ("created", "running"):
                return None
            row = conn.execute(
                "SELECT idx FROM map_items WHERE job_id = ? AND (state = 'pending' OR "
                "(state = 'running' AND claimed_at < ?)) ORDER BY idx LIMIT 1",
                (job_id, stale),
            ).fetchone()
            if row is None:
                return None
            idx = row[0]
            n = conn.execute(
                "UPDATE map_items SET state = 'running', claim_token = ?, claimed_at = ? "
                "WHERE job_id = ? AND idx = ? AND (state = 'pending' OR (state = 'running' AND claimed_at < ?))",
                (token, now, job_id, idx, stale),
            ).rowcount
            if n != 1:
                return None
            conn.execute("INSERT INTO map_claims VALUES (?, ?, ?, ?, ?, NULL)", (job_id, idx, token, worker_id, now))
        return self.job(job_id), self.item(job_id, idx), token

    def _fenced(self, conn: Any, job_id: str, idx: int, token: str) -> bool:
        row = conn.execute("SELECT claim_token FROM map_items WHERE job_id = ? AND idx = ?", (job_id, idx)).fetchone()
        return row is not None and row[0] == token

    def _log_message(self, conn: Any, job_id: str, idx: int, role: str, content: str) -> None:
        n = conn.execute(
            "SELECT COALESCE(MAX(n), -1) + 1 FROM map_item_messages WHERE job_id = ? AND idx = ?", (job_id, idx)
        ).fetchone()[0]
        conn.execute("INSERT INTO map_item_messages VALUES (?, ?, ?, ?, ?)", (job_id, idx, n, role, content))

    def _seed(self, job: MapJob, item: MapItem) -> str:
        if job.mode == "llm":
            return json.dumps(item.input)
        return (
            f"{job.prompt}\n\nInput item:\n{json.dumps(item.input)}\n\n"
            f"Answer with only a JSON value matching this schema:\n{json.dumps(job.output_schema)}"
        )

    def worker_step(self, job_id: str, worker_id: str = "w0") -> StepResult | None:
        """Claim one item and run its attempt loop; None when no work is left."""
        claimed = self._claim(job_id, worker_id)
        if claimed is None:
            return None
        job, item, token = claimed
        with self.store.transaction() as conn:
            if item.attempts == 0 and not self.item_conversation(job.id, item.index):
                if job.mode == "llm":
                    self._log_message(conn, job.id, item.index, "system", job.prompt)
                self._log_message(conn, job.id, item.index, "user", self._seed(job, item))
        attempts = item.attempts
        agent_session = item.agent_session_id
        last_error = item.error or "no attempt made"
        while attempts < job.retry_limit:
            conversation = self.item_conversation(job.id, item.index)
            reply: str | None = None
            try:
                if job.mode == "llm":
                    request = CompletionRequest("map_item", tuple(conversation))
                    reply = self.provider.complete(request).text
                else:
                    assert self.agent_runner is not None
                    reply, agent_session = self.agent_runner(job, item, conversation[-1]["content"], agent_session)
            except ProviderError as exc:
                last_error = f"provider error: {exc}"
            value: Any = None
            ok = False
            if reply is not None:
                try:
                    value = parse_reply(reply)
                    errors = iter_errors(value, job.output_schema)
                    last_error = "; ".join(errors)
                    ok = not errors
                except json.JSONDecodeError as exc:
                    last_error = f"response is not valid JSON ({exc.msg} at position {exc.pos})"
            attempts += 1
            with self.store.transaction() as conn:
                if not self._fenced(conn, job.id, item.index, token):
                    log.warning("lost claim on %s[%d]; abandoning", job.id, item.index)
                    return StepResult(item.index, "lost", attempts)
                if reply is not None:
                    self._log_message(conn, job.id, item.index, "assistant", reply)
                if ok:
                    conn.execute(
                        "UPDATE map_items SET state = 'ok', attempts = ?, output = ?, error = NULL, "
                        "claim_token = NULL, agent_session_id = ? WHERE job_id = ? AND idx = ?",
                        (attempts, json.dumps(value), agent_session, job.id, item.index),
                    )
                    conn.execute("UPDATE map_claims SET released_at = ? WHERE claim_token = ?", (self.clock(), token))
                    return StepResult(item.index, "ok", attempts)
                if reply is not None and attempts < job.retry_limit:
                    self._log_message(conn, job.id, item.index, "user", CORRECTION.format(error=last_error))
                final = attempts >= job.retry_limit
                conn.execute(
                    "UPDATE map_items SET attempts = ?, error = ?, agent_session_id = ?"
                    + (", state = 'error', claim_token = NULL" if final else "")
                    + " WHERE job_id = ? AND idx = ?",
                    (attempts, last_error, agent_session, job.id, item.index),
                )
                if final:
                    conn.execute("UPDATE map_claims SET released_at = ? WHERE claim_token = ?", (self.clock(), token))
        return StepResult(item.index, "error", attempts)

    def run_workers(self, job_id: str, concurrency: int | None = None) -> None:
        job = self.job(job_id)
        self.store.execute("UPDATE map_jobs SET status = 'running' WHERE id = ? AND status = 'created'", (job_id,))
        n = max(1, min(concurrency or job.concurrency, job.item_count or 1))
        failures: list[BaseException] = []

        def loop(worker: str) -> None:
            try:
                while self.worker_step(job_id, worker) is not None:
                    pass
            except BaseException as exc:  # surfaced after join
                failures.append(exc)

        threads = [threading.Thread(target=loop, args=(f"{job_id}-w{i}",), daemon=True) for i in range(n)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            raise JobError(f"worker crashed: {failures[0]!r}") from failures[0]

    # -- finalization ----------------------------------------------------------------

    def finalize_job(self, job_id: str) -> SummaryHandle:
        job = self.job(job_id)
        items = self.items(job_id)
        unfinished = [it.index for it in items if it.state not in ("ok", "error")]
        if unfinished:
            raise JobError(f"job {job_id} has unfinished items: {unfinished[:10]}")
        out = Path(job.output_path)
        tmp = out.with_name(out.name + ".tmp")
        try:
            out.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, "w", encoding="utf-8") as fh:
                for it in items:
                    if it.state == "ok":
                        rec = {"index": it.index, "status": "ok", "output": it.output}
                    else:
                        rec = {"index": it.index, "status": "error", "error": it.error}
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            os.replace(tmp, out)
        except OSError as exc:
            raise JobError(f"cannot write {out}: {exc.strerror or exc}") from None
        file_id = self.register_output(out) if self.register_output else None
        self.store.execute(
            "UPDATE map_jobs SET status = 'completed', output_file_id = ? WHERE id = ?", (file_id, job_id)
        )
        counts = {"ok": sum(it.state == "ok" for it in items), "error": sum(it.state == "error" for it in items)}
        return SummaryHandle(job_id, counts, str(out), file_id)

    def run(self, spec: MapJobSpec) -> SummaryHandle:
        job = self.submit_map_job(spec)
        if job.item_count:
            self.run_workers(job.id)
        return self.finalize_job(job.id)
