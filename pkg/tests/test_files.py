import csv
import json
import sqlite3
from pathlib import Path

import pytest

from lcm.controller import Controller, ControllerConfig
from lcm.files import (
    FileGateway,
    explore,
    explore_code,
    explore_csv,
    explore_json,
    explore_sql_script,
    sniff_kind,
)
from lcm.provider import Rule, ScriptedProvider, fail
from lcm.store import Store
from lcm.tokenizer import count_tokens

from conftest import text_of


@pytest.fixture
def gateway(tmp_path):
    store = Store()
    ctrl = Controller(store, ScriptedProvider(), ControllerConfig(tau_soft=1_000_000, tau_hard=2_000_000))
    gw = FileGateway(ctrl, ScriptedProvider(), threshold=1000, spill_dir=tmp_path / "spill")
    yield gw
    ctrl.close()
    store.close()


def test_sniff_by_extension_and_magic(tmp_path):
    assert sniff_kind("x.json", b"{}") == "json"
    assert sniff_kind("x.tsv", b"a\tb") == "csv"
    assert sniff_kind("x.py", b"def f(): pass") == "code"
    assert sniff_kind("x.unknown", b"plain words") == "text"
    assert sniff_kind("x.unknown", b"\x00\x01\x02") == "binary"
    assert sniff_kind("x.json", b"\x89PNG\r\n") == "binary"
    assert sniff_kind("x.bin", b"SQLite format 3\x00rest") == "sql"
    assert sniff_kind("fake.db", b"not a database") == "binary"


def test_explore_json_object_and_lines():
    r = explore_json(json.dumps({"a": 1, "b": [1], "c": None}))
    assert r.structure["keys"] == {"a": "integer", "b": "array", "c": "null"}
    r = explore_json('{"x": 1}\n{"x": "s", "y": true}\n')
    assert r.structure["top_level"] == "jsonl" and r.structure["length"] == 2
    assert r.structure["keys"]["x"] == ["integer", "string"]
    bad = explore_json('{"x": 1}\n{oops\n')
    assert "line 2" in bad.summary


def test_explore_csv_types():
    text = "id,price,name,flag\n1,2.5,a,true\n2,3,b,false\n"
    r = explore_csv(text)
    assert r.structure["rows"] == 2
    assert r.structure["types"] == {"id": "integer", "price": "number", "name": "string", "flag": "boolean"}


def test_explore_sql_script():
    text = "CREATE TABLE users (id INTEGER PRIMARY KEY, name TEXT, PRIMARY KEY (id));\nINSERT INTO users VALUES (1,'a');"
    r = explore_sql_script(text)
    assert r.structure["tables"]["users"]["columns"] == ["id", "name"]
    assert r.structure["inserts"] == {"users": 1}


def test_explore_sqlite_database(tmp_path):
    db = tmp_path / "data.db"
    conn = sqlite3.connect(db)
    conn.execute("CREATE TABLE t (a INTEGER, b TEXT)")
    conn.executemany("INSERT INTO t VALUES (?, ?)", [(i, str(i)) for i in range(7)])
    conn.commit()
    conn.close()
    r = explore(db)
    assert r.mime_kind == "sql"
    assert r.structure["tables"]["t"]["rows"] == 7


def test_explore_code_nesting():
    src = "class A:\n    def m(self, x):\n        pass\n\ndef top(y):\n    return y\n"
    r = explore_code(src)
    sigs = [(s["indent"], s["signature"]) for s in r.structure["signatures"]]
    assert sigs == [(0, "class A"), (4, "def m(self, x)"), (0, "def top(y)")]


def test_explore_empty_and_binary(tmp_path):
    (tmp_path / "e.txt").write_text("")
    assert explore(tmp_path / "e.txt").summary == "empty file, 0 tokens"
    (tmp_path / "b.bin").write_bytes(bytes(range(256)))
    r = explore(tmp_path / "b.bin")
    assert r.mime_kind == "binary" and "256 bytes" in r.summary


def test_text_exploration_falls_back_to_truncation(tmp_path):
    p = tmp_path / "notes.txt"
    p.write_text(text_of(20_000))
    r = explore(p, provider=ScriptedProvider([Rule(fail())]))
    assert r.structure["strategy"] == "truncate"
    assert count_tokens(r.summary) <= 1024


def test_summary_is_capped(tmp_path):
    p = tmp_path / "wide.json"
    p.write_text(json.dumps({f"key_{i}": i for i in range(5000)}))
    assert count_tokens(explore(p).summary) <= 1024


def test_small_result_inlined(gateway):
    e = gateway.intercept("short output", "s")
    assert e.kind == "raw_message"
    assert gateway.store.get_message(e.ref_id).content == "short output"


def test_large_text_spilled_and_referenced(gateway):
    big = text_of(5000, "spill")
    e = gateway.intercept(big, "s")
    assert e.kind == "file_reference"
    f = gateway.store.get_file(e.ref_id)
    assert Path(f.path).read_text() == big
    assert big not in gateway.controller.render_context("s")
    msg = gateway.store.messages("s")[-1]
    assert msg.file_refs == (f.id,)
    assert gateway.store.get_file(f.id).first_seen_message == msg.id


def test_path_result_and_reuse(gateway, tmp_path):
    p = tmp_path / "rows.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b"])
        for i in range(2000):
            w.writerow([i, f"value {i}"])
    e1 = gateway.intercept(p, "s")
    e2 = gateway.intercept(p, "s")
    assert e1.kind == e2.kind == "file_reference"
    assert e1.ref_id == e2.ref_id
    assert "CSV with 2 columns and 2000 rows" in gateway.store.get_file(e1.ref_id).exploration_summary


def test_binary_always_by_reference(gateway, tmp_path):
    p = tmp_path / "tiny.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\n" + b"\x00" * 10)
    assert gateway.intercept(p, "s").kind == "file_reference"


def test_unreadable_path_becomes_error_message(gateway, tmp_path):
    e = gateway.intercept(tmp_path / "missing.txt", "s")
    assert e.kind == "raw_message"
    assert gateway.store.get_message(e.ref_id).content.startswith("error: cannot read")


def test_changed_file_gets_new_record(gateway, tmp_path):
    p = tmp_path / "data.json"
    p.write_text(json.dumps([{"v": i} for i in range(1000)]))
    a = gateway.intercept(p, "s").ref_id
    p.write_text(json.dumps([{"v": str(i)} for i in range(1000)]))
    b = gateway.intercept(p, "s").ref_id
    assert a != b
