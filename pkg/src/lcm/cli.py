"""``lcm`` command line: replay, inspection and map jobs over one store file."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import audit
from .controller import ControllerConfig
from .errors import LCMError, ToolError
from .files import DEFAULT_THRESHOLD
from .map_engine import DEFAULT_CONCURRENCY, DEFAULT_RETRIES, MapJobSpec
from .provider import HttpProvider, Provider, ScriptedProvider, load_script
from .runtime import Engine, EngineConfig
from .store import Store

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    store_path: str = "lcm.db"
    tau_soft: int = 100_000
    tau_hard: int = 150_000
    file_threshold_tokens: int = DEFAULT_THRESHOLD
    provider_script: str | None = None
    http_endpoint: str | None = None
    api_key: str | None = None
    concurrency: int = DEFAULT_CONCURRENCY
    retries: int = DEFAULT_RETRIES

    def validate(self) -> None:
        if not 0 < self.tau_soft < self.tau_hard:
            raise UsageError(f"need 0 < tau_soft < tau_hard (got {self.tau_soft}, {self.tau_hard})")
        if self.file_threshold_tokens < 1:
            raise UsageError("file threshold must be positive")
        if self.concurrency < 1 or self.retries < 1:
            raise UsageError("concurrency and retries must be positive")
        if self.provider_script and not Path(self.provider_script).is_file():
            raise UsageError(f"provider script not found: {self.provider_script}")

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> CliConfig:
        env = dict(os.environ if env is None else env)

        def num(key: str, default: int) -> int:
            raw = env.get(key)
            if raw is None:
                return default
            try:
                return int(raw)
            except ValueError:
                raise UsageError(f"{key} must be an integer, got {raw!r}") from None

        return cls(
            store_path=env.get("LCM_STORE_PATH", "lcm.db"),
            tau_soft=num("LCM_TAU_SOFT", 100_000),
            tau_hard=num("LCM_TAU_HARD", 150_000),
            file_threshold_tokens=num("LCM_FILE_THRESHOLD", DEFAULT_THRESHOLD),
            provider_script=env.get("LCM_PROVIDER_SCRIPT"),
            http_endpoint=env.get("LCM_HTTP_ENDPOINT"),
            api_key=env.get("LCM_API_KEY"),
        )

    def provider(self) -> Provider:
        if self.provider_script:
            return load_script(self.provider_script)
        if self.http_endpoint:
            return HttpProvider(self.http_endpoint, model=os.environ.get("LCM_MODEL", "default"),
                                api_key=self.api_key)
        return ScriptedProvider()

    def engine(self, store: Store, deterministic: bool = False) -> Engine:
        ctrl = ControllerConfig(tau_soft=self.tau_soft, tau_hard=self.tau_hard, wait_at_boundary=deterministic)
        cfg = EngineConfig(controller=ctrl, file_threshold=self.file_threshold_tokens,
                           map_concurrency=self.concurrency, map_retries=self.retries)
        return Engine(store, self.provider(), cfg)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lcm", description="Lossless context management engine")
    p.add_argument("--store", dest="store_path", help="SQLite store file (env LCM_STORE_PATH)")
    p.add_argument("--tau-soft", type=int, help="soft threshold in tokens (env LCM_TAU_SOFT)")
    p.add_argument("--tau-hard", type=int, help="hard threshold in tokens (env LCM_TAU_HARD)")
    p.add_argument("--file-threshold", dest="file_threshold_tokens", type=int,
                   help="tokens above which tool output is stored by reference (env LCM_FILE_THRESHOLD)")
    p.add_argument("--provider-script", help="JSONL scripted-provider rules (env LCM_PROVIDER_SCRIPT)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    # accepted after the subcommand too; SUPPRESS keeps the leaf from clobbering the global flag
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True)

    session = sub.add_parser("session", help="replay turns or show session stats")
    session = session.add_subparsers(dest="action", required=True)
    rp = session.add_parser("replay", parents=[common], help="run a scripted-turns file")
    rp.add_argument("--script", required=True, help="provider script (JSONL rules)")
    rp.add_argument("--turns", required=True, help="turns file (JSONL)")
    rp.add_argument("--session", help="session id (created if absent)")
    rp.set_defaults(func=cmd_session_replay)
    st = session.add_parser("stats", parents=[common], help="regime, token totals and DAG shape")
    st.add_argument("session_id")
    st.set_defaults(func=cmd_session_stats)

    dag = sub.add_parser("dag", help="inspect the summary DAG").add_subparsers(dest="action", required=True)
    ds = dag.add_parser("show", parents=[common], help="print the DAG as a tree or DOT")
    ds.add_argument("session_id")
    ds.add_argument("--dot", action="store_true", help="emit Graphviz DOT")
    ds.set_defaults(func=cmd_dag_show)

    g = sub.add_parser("grep", parents=[common], help="regex search over verbatim history")
    g.add_argument("pattern")
    g.add_argument("--session")
    g.add_argument("--summary")
    g.add_argument("--page", type=int, default=1)
    g.set_defaults(func=cmd_grep)

    d = sub.add_parser("describe", parents=[common], help="metadata for a summary or file id")
    d.add_argument("id")
    d.set_defaults(func=cmd_describe)

    e = sub.add_parser("expand", parents=[common], help="expand a summary to its children")
    e.add_argument("summary_id")
    e.add_argument("--as-subagent", action="store_true", help="expand from a synthetic depth-1 session")
    e.set_defaults(func=cmd_expand)

    mp = sub.add_parser("map", help="run llm_map / agentic_map jobs").add_subparsers(dest="action",
                                                                                  required=True)
    mr = mp.add_parser("run", parents=[common], help="run a map job over a JSONL file")
    mr.add_argument("--mode", choices=("llm", "agentic"), required=True)
    mr.add_argument("--input", required=True)
    mr.add_argument("--prompt-file", required=True)
    mr.add_argument("--schema", required=True)
    mr.add_argument("--output", required=True)
    mr.add_argument("--concurrency", type=int)
    mr.add_argument("--retries", type=int)
    mr.add_argument("--read-only", action="store_true")
    mr.add_argument("--session")
    mr.set_defaults(func=cmd_map_run)

    v = sub.add_parser("verify", parents=[common], help="DAG integrity and losslessness round trip")
    v.add_argument("session_id")
    v.set_defaults(func=cmd_verify)
    return p


def _emit(args: argparse.Namespace, data: Any, text: str) -> None:
    print(json.dumps(data, indent=2, default=str) if args.json else text)


# -- commands -------------------------------------------------------------------


def cmd_session_replay(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    cfg.provider_script = args.script
    cfg.validate()
    engine = cfg.engine(store, deterministic=True)
    try:
        sid = args.session or engine.new_session()
        transcripts = engine.replay_transcript(sid, args.turns)
    finally:
        engine.close()
    rows = [asdict(t) for t in transcripts]
    lines = [f"session {sid}", f"{'turn':>4} {'regime':<8} {'ctx_tok':>8} {'calls':>5} {'tools':>5}  final"]
    for t in transcripts:
        final = (t.final or ("<capped>" if t.capped else "")).replace("\n", " ")[:60]
        lines.append(f"{t.turn_index:>4} {t.regime:<8} {t.context_tokens:>8} {t.provider_calls:>5} "
                     f"{t.tool_calls:>5}  {final}")
    _emit(args, {"session_id": sid, "turns": rows}, "\n".join(lines))
    return EXIT_OK


def cmd_session_stats(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    session = store.get_session(args.session_id)
    engine = cfg.engine(store)
    tokens = engine.controller.tokens(session.id)
    stats = audit.dag_stats(store, session.id)
    data = {
        "session_id": session.id,
        "depth": session.depth,
        "agent_kind": session.agent_kind,
        "regime": engine.controller.overhead_regime(session.id),
        "context_tokens": tokens,
        "context_entries": len(store.context_entries(session.id)),
        "messages": store.max_seq(session.id),
        "stored_tokens": sum(m.token_count for m in store.messages(session.id)),
        "dag": asdict(stats),
    }
    text = "\n".join(f"{k}: {v}" for k, v in data.items() if k != "dag")
    text += "\n" + "\n".join(f"dag.{k}: {v}" for k, v in asdict(stats).items())
    _emit(args, data, text)
    return EXIT_OK


def cmd_dag_show(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    store.get_session(args.session_id)
    if args.dot:
        print(audit.to_dot(store, args.session_id))
        return EXIT_OK
    nodes = [asdict(n) for n in store.summaries(args.session_id)]
    _emit(args, nodes, audit.render_tree(store, args.session_id) or "(empty context)")
    return EXIT_OK


def cmd_grep(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    from .tools import MemoryTools

    tools = MemoryTools(store)
    if args.session:
        roots = [args.session]
    else:
        roots = [s.id for s in store.list_sessions() if s.parent_id is None]
    pages = [tools.lcm_grep(sid, args.pattern, args.summary, args.page) for sid in roots]
    data = [{"session": sid, "total": pg.total_matches, "page": pg.page, "pages": pg.pages,
             "matches": [asdict(m) for m in pg.matches]} for sid, pg in zip(roots, pages)]
    text = "\n\n".join(f"# {sid}\n{pg.render()}" for sid, pg in zip(roots, pages) if pg.total_matches)
    _emit(args, data, text or "no matches")
    return EXIT_OK


def cmd_describe(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    from .tools import MemoryTools

    text = MemoryTools(store).lcm_describe(args.id)
    data = store.describe(args.id) if args.json else None
    _emit(args, data, text)
    return EXIT_OK


def cmd_expand(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    from .tools import MemoryTools

    node = store.get_summary(args.summary_id)
    owner = store.get_session(node.session_id)
    caller = owner
    if args.as_subagent:
        caller = store.create_session(parent_id=owner.id, agent_kind="read_only_explorer", read_only=True)
    result = MemoryTools(store).lcm_expand(caller, node.id)
    data = {"summary_id": node.id, "kind": result.kind,
            "messages": [asdict(m) for m in result.messages],
            "children": [asdict(c) for c in result.children]}
    _emit(args, data, result.render())
    return EXIT_OK


def cmd_map_run(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    try:
        prompt = Path(args.prompt_file).read_text(encoding="utf-8")
        schema = json.loads(Path(args.schema).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise LCMError(f"cannot load prompt/schema: {exc}") from None
    engine = cfg.engine(store)
    try:
        sid = args.session or engine.new_session()
        spec = MapJobSpec(args.mode, args.input, args.output, prompt, schema,
                          concurrency=args.concurrency or cfg.concurrency,
                          retry_limit=args.retries or cfg.retries, read_only=args.read_only, session_id=sid)
        handle = engine.maps.run(spec)
    finally:
        engine.close()
    _emit(args, asdict(handle), handle.render())
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, cfg: CliConfig, store: Store) -> int:
    from .controller import Controller

    store.get_session(args.session_id)
    problems = store.validate_dag(args.session_id)
    problems += Controller(store, ScriptedProvider()).coverage_problems(args.session_id)
    problems += audit.roundtrip_problems(store, args.session_id)
    _emit(args, {"ok": not problems, "problems": problems}, "OK" if not problems else "\n".join(problems))
    return EXIT_OK if not problems else EXIT_DOMAIN


# -- entry point ----------------------------------------------------------------


def resolve_config(args: argparse.Namespace, env: dict[str, str] | None = None) -> CliConfig:
    cfg = CliConfig.from_env(env)
    for key in ("store_path", "tau_soft", "tau_hard", "file_threshold_tokens", "provider_script"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"lcm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    func: Callable[[argparse.Namespace, CliConfig, Store], int] = args.func
    try:
        store = Store(cfg.store_path)
    except Exception as exc:  # sqlite raises several unrelated types here
        print(f"lcm: cannot open store {cfg.store_path}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        code = func(args, cfg, store)
        sys.stdout.flush()
        return code
    except UsageError as exc:
        print(f"lcm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (LCMError, ToolError, OSError) as exc:
        print(f"lcm: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    finally:
        store.close()


if __name__ == "__main__":
    sys.exit(main())
