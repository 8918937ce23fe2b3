import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcm.controller import Controller, ControllerConfig
from lcm.errors import ToolError
from lcm.provider import ScriptedProvider
from lcm.store import Store
from lcm.tokenizer import count_tokens
from lcm.tools import EXPAND_RESTRICTION, MemoryTools, clip_excerpt

from conftest import summary_rules, text_of


@pytest.fixture
def compacted():
    store = Store()
    ctrl = Controller(store, ScriptedProvider(summary_rules()), ControllerConfig(tau_soft=2_000, tau_hard=3_000))
    root = store.create_session()
    for i in range(40):
        ctrl.ingest_item(root.id, "user" if i % 2 == 0 else "assistant", f"turn {i} marker{i % 5} " + text_of(150))
    yield store, root, MemoryTools(store, page_size=5)
    ctrl.close()
    store.close()


def test_grep_finds_compacted_and_live(compacted):
    store, root, tools = compacted
    matches = tools.search(root.id, r"marker3 ")
    assert [m.seq for m in matches] == [i + 1 for i in range(40) if i % 5 == 3]
    assert any(m.covering_summary_id for m in matches)
    assert matches[-1].covering_summary_id is None
    covered = [m for m in matches if m.covering_summary_id]
    for m in covered:
        lo, hi = store.get_summary(m.covering_summary_id).span
        assert lo <= m.seq <= hi


def test_grep_pagination(compacted):
    store, root, tools = compacted
    total = tools.search(root.id, "turn")
    pages = [tools.lcm_grep(root.id, "turn", page=p) for p in range(1, 9)]
    assert pages[0].pages == 8
    assert [m for p in pages for m in p.matches] == total
    assert tools.lcm_grep(root.id, "turn", page=99).matches == []
    with pytest.raises(ToolError):
        tools.lcm_grep(root.id, "turn", page=0)


def test_grep_scoped_to_summary(compacted):
    store, root, tools = compacted
    node = store.get_summary(store.context_entries(root.id)[0].ref_id)
    scoped = tools.search(root.id, "turn", summary_id=node.id)
    leaves = store.leaves_under(node.id)
    assert scoped and all(any(l.span[0] <= m.seq <= l.span[1] for l in leaves) for m in scoped)
    with pytest.raises(ToolError):
        tools.search(root.id, "turn", summary_id="sum_nope")


def test_grep_excerpts_bounded(compacted):
    store, root, tools = compacted
    for m in tools.search(root.id, "marker"):
        assert count_tokens(m.excerpt) <= 200


def test_grep_across_family(compacted):
    store, root, tools = compacted
    child = store.create_session(parent_id=root.id, agent_kind="general")
    store.append_message(child.id, "user", "marker3 from the child")
    matches = tools.search(root.id, "marker3 from")
    assert [(m.session_id, m.seq) for m in matches] == [(child.id, 1)]
    other = store.create_session()
    assert tools.search(other.id, "marker3") == []


def test_describe_and_unknown(compacted):
    store, root, tools = compacted
    sid = store.context_entries(root.id)[0].ref_id
    text = tools.lcm_describe(sid)
    assert sid in text and "covers:" in text
    with pytest.raises(ToolError, match="unknown identifier"):
        tools.lcm_describe("sum_0000")


def test_expand_policy(compacted):
    store, root, tools = compacted
    sid = store.context_entries(root.id)[0].ref_id
    with pytest.raises(ToolError) as exc:
        tools.lcm_expand(root, sid)
    assert str(exc.value) == EXPAND_RESTRICTION
    child = store.create_session(parent_id=root.id, agent_kind="general")
    out = tools.lcm_expand(child, sid)
    assert out.render()
    stranger = store.create_session(parent_id=store.create_session().id, agent_kind="general")
    with pytest.raises(ToolError, match="outside"):
        tools.lcm_expand(stranger, sid)


def test_expand_leaf_returns_verbatim(compacted):
    store, root, tools = compacted
    child = store.create_session(parent_id=root.id, agent_kind="general")
    leaf = next(n for n in store.summaries(root.id) if n.kind == "leaf")
    res = tools.lcm_expand(child, leaf.id)
    assert [m.seq for m in res.messages] == list(range(leaf.span[0], leaf.span[1] + 1))
    assert res.messages[0].content == store.get_message_by_seq(root.id, leaf.span[0]).content


@given(st.text(min_size=1, max_size=3000), st.integers(0, 2999), st.integers(3, 100))
def test_clip_excerpt_bounds(text, pos, budget):
    pos = min(pos, len(text) - 1)
    out = clip_excerpt(text, pos, pos + 1, budget, Store().tokenizer)
    assert count_tokens(out) <= max(budget, 2) + 2
    core = out.strip("…")
    assert core in text
