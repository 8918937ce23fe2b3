"""Sub-agent delegation (Task, Tasks) and the scope-reduction guard."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

from .errors import LCMError, ToolError
from .models import SessionRecord

if TYPE_CHECKING:
    from .runtime import Engine

log = logging.getLogger(__name__)

SPAWNABLE_KINDS = ("general", "read_only_explorer")
TRIVIAL_KEPT_WORK = frozenset({"nothing", "none", "n/a", "-"})

REJECTION = (
    "Task rejected: a sub-agent that delegates must state a non-empty kept_work that differs from "
    "delegated_scope. You would be handing off your entire responsibility, so perform the work directly."
)
EXPLORER_CANNOT_SPAWN = "read-only explorer sessions cannot spawn sub-agents"


@dataclass(frozen=True)
class TaskSpec:
    prompt: str
    subagent_type: str = "general"
    delegated_scope: str = ""
    kept_work: str = ""

    @classmethod
    def from_args(cls, args: dict[str, Any]) -> TaskSpec:
        if not isinstance(args.get("prompt"), str) or not args["prompt"].strip():
            raise ToolError("Task needs a non-empty 'prompt'")
        kind = args.get("subagent_type", "general")
        if kind not in SPAWNABLE_KINDS:
            raise ToolError(f"subagent_type must be one of {SPAWNABLE_KINDS}, got {kind!r}")
        return cls(args["prompt"], kind, str(args.get("delegated_scope") or ""), str(args.get("kept_work") or ""))


@dataclass(frozen=True)
class GuardDecision:
    allowed: bool
    reason: str = ""


@dataclass(frozen=True)
class TaskResult:
    ok: bool
    text: str
    session_id: str | None = None


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def check_scope_reduction(caller: SessionRecord, spec: TaskSpec) -> GuardDecision:
    """Textual stand-in for "the caller can say what it keeps"; total and deterministic."""
    if caller.depth == 0 and caller.agent_kind == "root":
        return GuardDecision(True)
    if spec.subagent_type == "read_only_explorer":
        return GuardDecision(True)
    kept = _normalize(spec.kept_work)
    if not kept or kept.strip(".!") in TRIVIAL_KEPT_WORK or kept == _normalize(spec.delegated_scope):
        return GuardDecision(False, REJECTION)
    return GuardDecision(True)


class Delegation:
    def __init__(self, engine: Engine, parallel_cap: int = 8) -> None:
        self.engine = engine
        self.store = engine.store
        self.parallel_cap = parallel_cap

    def _spawn(self, caller: SessionRecord, spec: TaskSpec) -> TaskResult:
        child = self.store.create_session(
            parent_id=caller.id,
            agent_kind=spec.subagent_type,
            read_only=spec.subagent_type == "read_only_explorer" or caller.read_only,
        )
        seed = spec.prompt
        if spec.delegated_scope:
            seed += f"\n\n[delegated scope] {spec.delegated_scope}"
        try:
            transcript = self.engine.run_turn(child.id, seed)
        except LCMError as exc:
            return TaskResult(False, f"sub-agent {child.id} failed: {exc}", child.id)
        if transcript.final is None:
            last = self.store.messages(child.id)[-1].content if self.store.max_seq(child.id) else ""
            return TaskResult(False, f"sub-agent {child.id} ended without a final answer; last state: {last[:500]}",
                              child.id)
        return TaskResult(True, transcript.final, child.id)

    def run_task(self, caller_id: str, spec: TaskSpec) -> TaskResult:
        caller = self.store.get_session(caller_id)
        if caller.agent_kind == "read_only_explorer":
            return TaskResult(False, EXPLORER_CANNOT_SPAWN)
        decision = check_scope_reduction(caller, spec)
        if not decision.allowed:
            return TaskResult(False, decision.reason)
        return self._spawn(caller, spec)

    def run_parallel_tasks(self, caller_id: str, specs: Sequence[TaskSpec]) -> list[TaskResult]:
        """Sibling decomposition: no scope-reduction check; results in input order."""
        if len(specs) < 2:
            raise ToolError("Tasks needs two or more independent tasks; use Task for a single one")
        caller = self.store.get_session(caller_id)
        if caller.agent_kind == "read_only_explorer":
            raise ToolError(EXPLORER_CANNOT_SPAWN)
        with ThreadPoolExecutor(min(self.parallel_cap, len(specs)), thread_name_prefix="lcm-task") as pool:
            futures = [pool.submit(self._spawn, caller, spec) for spec in specs]
            results = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:  # one failing sibling must not sink the others
                    results.append(TaskResult(False, f"sub-agent crashed: {exc}"))
        return results
