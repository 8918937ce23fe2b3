"""Turn loop: render context, call the model, route tool calls, ingest results.

The model speaks a small directive protocol: a JSON object ``{"tool": name,
"args": {...}}`` or ``{"final": text}``, either as the whole reply or inside a
fenced ``json`` block. Anything else is taken as a final answer.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .controller import Controller, ControllerConfig
from .delegation import Delegation, TaskSpec
from .errors import LCMError, ProviderError, ScriptError, ToolError, TurnAborted
from .files import DEFAULT_THRESHOLD, FileGateway
from .map_engine import DEFAULT_CONCURRENCY, DEFAULT_RETRIES, LEASE_SECONDS, MapEngine, MapItem, MapJob, MapJobSpec
from .provider import CompletionRequest, Provider, ProviderSlots
from .store import Store
from .tools import MemoryTools

log = logging.getLogger(__name__)

TOOL_CALL_CAP = 50
AGENT_MODE = "agent_turn"

SYSTEM_PROMPT = """You are an agent with a lossless memory. Older turns may appear as summaries tagged \
[lcm:summary id=...]; large files appear as [lcm:file id=...] references with an exploration summary.
Reply with exactly one JSON object per message: {"tool": "<name>", "args": {...}} to call a tool, or \
{"final": "<answer>"} to finish the turn.
Tools: lcm_grep(pattern, summary_id?, page?), lcm_describe(id), lcm_expand(summary_id) (sub-agents only), \
read_file(path), write_file(path, content), llm_map(input_path, output_path, prompt, output_schema, \
concurrency?, retries?), agentic_map(same plus read_only?), Task(prompt, subagent_type?, delegated_scope, \
kept_work), Tasks(tasks: [...])."""

_FENCED = re.compile(r"```json\s*\n(.*?)\n```", re.DOTALL)


@dataclass(frozen=True)
class Directive:
    final: str | None = None
    tool: str | None = None
    args: dict[str, Any] = field(default_factory=dict)


def _as_directive(obj: Any) -> Directive | None:
    if not isinstance(obj, dict):
        return None
    if "tool" in obj and isinstance(obj["tool"], str):
        args = obj.get("args", {})
        return Directive(tool=obj["tool"], args=args if isinstance(args, dict) else {"_invalid": args})
    if "final" in obj:
        final = obj["final"]
        return Directive(final=final if isinstance(final, str) else json.dumps(final))
    return None


def parse_directive(text: str) -> Directive:
    try:
        d = _as_directive(json.loads(text))
        if d is not None:
            return d
    except json.JSONDecodeError:
        pass
    for block in _FENCED.findall(text):
        try:
            d = _as_directive(json.loads(block))
        except json.JSONDecodeError:
            continue
        if d is not None:
            return d
    return Directive(final=text)


@dataclass(frozen=True)
class TurnTranscript:
    session_id: str
    turn_index: int
    context_tokens: int
    provider_calls: int
    tool_calls: int
    regime: str
    final: str | None
    capped: bool = False
    tools_used: tuple[str, ...] = ()


@dataclass
class EngineConfig:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    file_threshold: int = DEFAULT_THRESHOLD
    tool_call_cap: int = TOOL_CALL_CAP
    map_concurrency: int = DEFAULT_CONCURRENCY
    map_retries: int = DEFAULT_RETRIES
    lease_seconds: float = LEASE_SECONDS
    parallel_task_cap: int = 8
    spill_dir: str | None = None
    system_prompt: str = SYSTEM_PROMPT

    def __post_init__(self) -> None:
        if self.file_threshold < 1 or self.tool_call_cap < 1:
            raise ValueError("file_threshold and tool_call_cap must be positive")
        if self.map_concurrency < 1 or self.map_retries < 1:
            raise ValueError("map_concurrency and map_retries must be positive")


class Engine:
    def __init__(self, store: Store, providers: ProviderSlots | Provider, config: EngineConfig | None = None) -> None:
        self.store = store
        self.providers = providers if isinstance(providers, ProviderSlots) else ProviderSlots(providers)
        self.config = config or EngineConfig()
        primary = self.providers.slot("primary")
        self.controller = Controller(store, primary, self.config.controller)
        self.gateway = FileGateway(self.controller, primary, self.config.file_threshold, self.config.spill_dir)
        self.tools = MemoryTools(store)
        self.delegation = Delegation(self, self.config.parallel_task_cap)
        self.maps = MapEngine(
            store,
            self.providers.slot("lightweight"),
            register_output=lambda path: self.gateway.register(path).id,
            agent_runner=self._run_map_agent,
            lease_seconds=self.config.lease_seconds,
        )
        self._turns: dict[str, int] = {}
        self._lock = threading.Lock()
        self._handlers: dict[str, Callable[[str, dict[str, Any]], str | Path]] = {
            "lcm_grep": self._tool_grep,
            "lcm_describe": self._tool_describe,
            "lcm_expand": self._tool_expand,
            "read_file": self._tool_read,
            "write_file": self._tool_write,
            "llm_map": lambda sid, a: self._tool_map(sid, a, "llm"),
            "agentic_map": lambda sid, a: self._tool_map(sid, a, "agentic"),
            "Task": self._tool_task,
            "Tasks": self._tool_tasks,
        }

    def close(self) -> None:
        self.controller.close()

    # -- turns -------------------------------------------------------------------

    def new_session(self) -> str:
        return self.store.create_session().id

    def _next_turn(self, session_id: str) -> int:
        with self._lock:
            n = self._turns.get(session_id, 0)
            self._turns[session_id] = n + 1
            return n

    def run_turn(self, session_id: str, user_input: str | None = None,
                 tool_result_file: str | Path | None = None) -> TurnTranscript:
        self.store.ensure_session(session_id)
        self.controller.between_turns(session_id)
        regime = self.controller.overhead_regime(session_id)
        turn = self._next_turn(session_id)
        if user_input is not None:
            self.gateway.intercept(user_input, session_id, role="user")
        if tool_result_file is not None:
            self.gateway.intercept(Path(tool_result_file), session_id, role="tool")
        provider = self.providers.slot("primary")
        context_tokens = 0
        calls = tool_calls = 0
        used: list[str] = []
        while True:
            messages = self.controller.render_messages(session_id)
            context_tokens = max(context_tokens, self.controller.tokens(session_id))
            request = CompletionRequest(AGENT_MODE, (
                {"role": "system", "content": self.config.system_prompt},
                *(messages or [{"role": "user", "content": "(empty context)"}]),
            ))
            try:
                reply = provider.complete(request).text
            except ProviderError as exc:
                raise TurnAborted(f"turn {turn} of {session_id} aborted: {exc}") from exc
            calls += 1
            self.controller.ingest_item(session_id, "assistant", reply)
            directive = parse_directive(reply)
            if directive.tool is None:
                return TurnTranscript(session_id, turn, context_tokens, calls, tool_calls, regime,
                                      directive.final, False, tuple(used))
            if tool_calls >= self.config.tool_call_cap:
                self.controller.ingest_item(
                    session_id, "tool",
                    f"tool-call cap of {self.config.tool_call_cap} reached; the turn ends without a final answer",
                )
                return TurnTranscript(session_id, turn, context_tokens, calls, tool_calls, regime,
                                      None, True, tuple(used))
            tool_calls += 1
            used.append(directive.tool)
            result = self.dispatch_tool(session_id, directive.tool, directive.args)
            self.gateway.intercept(result, session_id, role="tool")

    def dispatch_tool(self, session_id: str, name: str, args: dict[str, Any]) -> str | Path:
        """Run one tool; failures come back as model-visible error text."""
        handler = self._handlers.get(name)
        if handler is None:
            return f"error: unknown tool {name!r}; available: {', '.join(self._handlers)}"
        if "_invalid" in args:
            return f"error: {name} args must be a JSON object"
        try:
            return handler(session_id, args)
        except LCMError as exc:
            return f"error: {exc}"
        except (KeyError, TypeError, ValueError) as exc:
            return f"error: bad arguments for {name}: {exc!r}"

    # -- tools -----------------------------------------------------------------------

    @staticmethod
    def _need(args: dict[str, Any], key: str, kind: type = str) -> Any:
        if key not in args:
            raise ToolError(f"missing argument {key!r}")
        if not isinstance(args[key], kind):
            raise ToolError(f"argument {key!r} must be {kind.__name__}")
        return args[key]

    def _tool_grep(self, sid: str, args: dict[str, Any]) -> str:
        page = self.tools.lcm_grep(sid, self._need(args, "pattern"), args.get("summary_id"), int(args.get("page", 1)))
        return page.render()

    def _tool_describe(self, sid: str, args: dict[str, Any]) -> str:
        return self.tools.lcm_describe(self._need(args, "id"))

    def _tool_expand(self, sid: str, args: dict[str, Any]) -> str:
        return self.tools.lcm_expand(self.store.get_session(sid), self._need(args, "summary_id")).render()

    def _tool_read(self, sid: str, args: dict[str, Any]) -> Path:
        return Path(self._need(args, "path"))

    def _tool_write(self, sid: str, args: dict[str, Any]) -> str:
        if self.store.get_session(sid).read_only:
            raise ToolError("write_file is not available in a read-only session")
        path = Path(self._need(args, "path"))
        content = self._need(args, "content")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
        except OSError as exc:
            raise ToolError(f"cannot write {path}: {exc.strerror or exc}") from None
        return f"wrote {len(content.encode('utf-8'))} bytes to {path}"

    def _tool_map(self, sid: str, args: dict[str, Any], mode: str) -> str:
        schema = args.get("output_schema")
        if isinstance(schema, str):
            schema = json.loads(Path(schema).read_text(encoding="utf-8"))
        spec = MapJobSpec(
            mode=mode,
            input_path=self._need(args, "input_path"),
            output_path=self._need(args, "output_path"),
            prompt=self._need(args, "prompt"),
            output_schema=schema if schema is not None else True,
            concurrency=int(args.get("concurrency", self.config.map_concurrency)),
            retry_limit=int(args.get("retries", self.config.map_retries)),
            read_only=bool(args.get("read_only", False)) or self.store.get_session(sid).read_only,
            session_id=sid,
        )
        return self.maps.run(spec).render()

    def _tool_task(self, sid: str, args: dict[str, Any]) -> str:
        result = self.delegation.run_task(sid, TaskSpec.from_args(args))
        return result.text if result.ok else f"error: {result.text}"

    def _tool_tasks(self, sid: str, args: dict[str, Any]) -> str:
        tasks = self._need(args, "tasks", list)
        specs = [TaskSpec.from_args(t if isinstance(t, dict) else {}) for t in tasks]
        results = self.delegation.run_parallel_tasks(sid, specs)
        return "\n\n".join(
            f"[task {i}] {'ok' if r.ok else 'failed'}: {r.text}" for i, r in enumerate(results)
        )

    # -- map items ------------------------------------------------------------------

    def _run_map_agent(self, job: MapJob, item: MapItem, message: str, agent_session: str | None) -> tuple[str, str]:
        if agent_session is None:
            agent_session = self.store.create_session(
                parent_id=job.session_id, agent_kind="map_item", read_only=job.read_only
            ).id
        transcript = self.run_turn(agent_session, message)
        if transcript.final is None:
            raise ProviderError(f"map item agent {agent_session} ended without a final answer")
        return transcript.final, agent_session

    # -- replay ----------------------------------------------------------------------

    def replay_transcript(self, session_id: str, path: str | Path) -> list[TurnTranscript]:
        turns = load_turns(path)
        self.store.ensure_session(session_id)
        out = []
        for turn in turns:
            out.append(self.run_turn(session_id, turn.get("user"), turn.get("tool_result_file")))
        self.controller.swap_pending(session_id, wait=True)
        return out


def load_turns(path: str | Path) -> list[dict[str, str]]:
    """Parse the whole scripted-turns file up front so a bad line aborts before any turn runs."""
    turns = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScriptError(str(path), lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or not obj.keys() or not obj.keys() <= {"user", "tool_result_file"}:
                raise ScriptError(str(path), lineno, "expected an object with 'user' and/or 'tool_result_file'")
            if not all(isinstance(v, str) for v in obj.values()):
                raise ScriptError(str(path), lineno, "turn fields must be strings")
            turns.append(obj)
    return turns
