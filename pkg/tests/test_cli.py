import json

import pytest

from lcm import cli
from lcm.cli import CliConfig, UsageError, main
from lcm.tools import EXPAND_RESTRICTION


@pytest.fixture
def env(tmp_path, monkeypatch):
    for k in ("LCM_STORE_PATH", "LCM_TAU_SOFT", "LCM_TAU_HARD", "LCM_FILE_THRESHOLD", "LCM_PROVIDER_SCRIPT",
              "LCM_HTTP_ENDPOINT", "LCM_API_KEY"):
        monkeypatch.delenv(k, raising=False)
    monkeypatch.setenv("LCM_STORE_PATH", str(tmp_path / "lcm.db"))
    monkeypatch.setenv("LCM_TAU_SOFT", "2000")
    monkeypatch.setenv("LCM_TAU_HARD", "4000")
    return tmp_path


def write_script(path, rules):
    path.write_text("".join(json.dumps(r) + "\n" for r in rules))
    return path


RULES = [
    {"match": {"mode": "preserve_details"}, "respond": {"kind": "head", "tokens": 80}},
    {"match": {"mode": "bullet_points"}, "respond": {"kind": "head", "tokens": 40}},
    {"match": {"mode": "agent_turn"}, "respond": {"kind": "json", "value": {"final": "ok"}}},
    {"match": {"mode": "map_item"}, "respond": {"kind": "json", "value": {"y": 1}}},
]


def replay(env, capsys, n=40):
    script = write_script(env / "p.jsonl", RULES)
    turns = env / "t.jsonl"
    turns.write_text("".join(json.dumps({"user": f"turn {i} needle{i} " + "w " * 800}) + "\n" for i in range(n)))
    assert main(["--json", "session", "replay", "--script", str(script), "--turns", str(turns)]) == 0
    return json.loads(capsys.readouterr().out)["session_id"]


def test_replay_stats_verify(env, capsys):
    sid = replay(env, capsys)
    assert main(["session", "stats", sid, "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["messages"] == 80 and stats["dag"]["summaries"] > 0
    assert main(["verify", sid]) == 0
    assert capsys.readouterr().out.strip() == "OK"


def test_replay_table_text(env, capsys):
    script = write_script(env / "p.jsonl", RULES)
    turns = env / "t.jsonl"
    turns.write_text('{"user": "hi"}\n')
    assert main(["session", "replay", "--script", str(script), "--turns", str(turns)]) == 0
    out = capsys.readouterr().out
    assert "regime" in out and "ok" in out


def test_dag_show_and_dot(env, capsys):
    sid = replay(env, capsys)
    assert main(["dag", "show", sid]) == 0
    assert "leaf" in capsys.readouterr().out
    assert main(["dag", "show", sid, "--dot"]) == 0
    assert capsys.readouterr().out.startswith("digraph")


def test_grep_describe_expand(env, capsys):
    sid = replay(env, capsys)
    assert main(["grep", "needle3 ", "--session", sid, "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data[0]["total"] == 1
    summary = data[0]["matches"][0]["covering_summary_id"]
    assert summary
    assert main(["describe", summary]) == 0
    assert summary in capsys.readouterr().out
    assert main(["expand", summary]) == 1
    assert EXPAND_RESTRICTION in capsys.readouterr().err
    assert main(["expand", summary, "--as-subagent"]) == 0
    assert capsys.readouterr().out
    assert main(["grep", "needle3 "]) == 0
    assert "needle3" in capsys.readouterr().out


def test_map_run(env, capsys):
    write_script(env / "p.jsonl", RULES)
    inp = env / "in.jsonl"
    inp.write_text("".join(json.dumps({"i": i}) + "\n" for i in range(100)))
    (env / "prompt.txt").write_text("compute")
    (env / "schema.json").write_text(json.dumps({"type": "object", "required": ["y"]}))
    out = env / "out.jsonl"
    rc = main(["--provider-script", str(env / "p.jsonl"), "map", "run", "--mode", "llm", "--input", str(inp),
               "--prompt-file", str(env / "prompt.txt"), "--schema", str(env / "schema.json"),
               "--output", str(out), "--concurrency", "4"])
    assert rc == 0
    records = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["index"] for r in records] == list(range(100))
    assert "100 ok" in capsys.readouterr().out


def test_usage_errors(env, capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert main(["--tau-soft", "10", "--tau-hard", "5", "verify", "x"]) == 2


def test_domain_errors(env, capsys):
    assert main(["describe", "sum_missing"]) == 1
    assert main(["verify", "ses_missing"]) == 1
    assert "lcm:" in capsys.readouterr().err


def test_flags_override_env(env):
    cfg = CliConfig.from_env({"LCM_TAU_SOFT": "5", "LCM_TAU_HARD": "9", "LCM_FILE_THRESHOLD": "7"})
    assert (cfg.tau_soft, cfg.tau_hard, cfg.file_threshold_tokens) == (5, 9, 7)
    args = cli.build_parser().parse_args(["--tau-soft", "6", "verify", "x"])
    merged = cli.resolve_config(args, {"LCM_TAU_SOFT": "5", "LCM_TAU_HARD": "9"})
    assert merged.tau_soft == 6 and merged.tau_hard == 9
    with pytest.raises(UsageError):
        CliConfig.from_env({"LCM_TAU_SOFT": "lots"})


def test_verify_is_a_thin_wrapper(env, capsys, monkeypatch):
    sid = replay(env, capsys, n=3)
    called = []
    monkeypatch.setattr(cli.audit, "roundtrip_problems", lambda store, s: called.append(s) or ["boom"])
    assert main(["verify", sid]) == 1
    assert called == [sid] and "boom" in capsys.readouterr().out
