import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcm.audit import recover_messages
from lcm.controller import ASYNC, BLOCKING, NONE, Controller, ControllerConfig, annotation, regime_for
from lcm.models import ContextEntry
from lcm.provider import Rule, ScriptedProvider, head, inflate
from lcm.store import Store

from conftest import summary_rules, text_of


def controller(rules=None, **cfg):
    store = Store()
    provider = ScriptedProvider(rules if rules is not None else summary_rules())
    return Controller(store, provider, ControllerConfig(**cfg)), provider


def test_regime_boundaries():
    assert regime_for(0, 10, 20) == NONE
    assert regime_for(9, 10, 20) == NONE
    assert regime_for(10, 10, 20) == ASYNC
    assert regime_for(19, 10, 20) == ASYNC
    assert regime_for(20, 10, 20) == BLOCKING


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(tau_soft=10, tau_hard=10)
    with pytest.raises(ValueError):
        ControllerConfig(min_block_tokens=100)
    with pytest.raises(ValueError):
        ControllerConfig(block_target_fraction=0)


def test_below_soft_nothing_happens():
    c, p = controller(tau_soft=10_000, tau_hard=20_000)
    for i in range(30):
        c.ingest_item("s", "user", text_of(100))
    assert p.call_count == 0
    assert c.store.summaries("s") == []
    assert len(c.context("s")) == 30


def _entry(kind, tokens, i):
    return ContextEntry(kind, f"id{i}", tokens, i, i, i)


def test_plan_block_prefix_excludes_newest():
    c, _ = controller()
    entries = [_entry("raw_message", 400, i) for i in range(5)]
    plan = c.plan_block(entries)
    assert plan is not None
    assert [e.ref_id for e in plan.block] == ["id0", "id1"]  # 800 >= max(513, ceil(0.3 * 2000))
    assert c.plan_block(entries[:1]) is None
    assert c.plan_block([_entry("raw_message", 10, 0), _entry("raw_message", 10_000, 1)]) is None


def test_plan_block_leaf_after_single_summary():
    c, _ = controller()
    entries = [_entry("summary", 100, 0)] + [_entry("raw_message", 600, i) for i in range(1, 5)]
    plan = c.plan_block(entries)
    assert plan.block[0].ref_id == "id1" and not plan.summaries


def test_plan_block_condenses_two_summaries():
    c, _ = controller()
    entries = [_entry("summary", 100, 0), _entry("summary", 100, 1)] + [_entry("raw_message", 600, i) for i in range(2, 5)]
    plan = c.plan_block(entries)
    assert len(plan.summaries) == 2 and len(plan.raw) >= 1


def test_plan_block_respects_need():
    c, _ = controller()
    entries = [_entry("raw_message", 1000, i) for i in range(10)]
    assert len(c.plan_block(entries, need=600).block) == 1
    assert len(c.plan_block(entries, need=None).block) == 3


def test_hard_limit_blocks_and_converges_with_adversary():
    c, _ = controller([Rule(inflate)], tau_soft=5_000, tau_hard=10_000)
    c.ingest_many("s", [("user", text_of(1000)) for _ in range(50)])
    assert c.tokens("s") <= 10_000
    assert c.coverage_problems("s") == []
    assert c.store.validate_dag("s") == []


def test_summary_entry_tokens_match_node():
    c, _ = controller(tau_soft=2_000, tau_hard=4_000)
    c.ingest_many("s", [("user", text_of(500)) for _ in range(20)])
    for e in c.context("s").entries:
        if e.kind == "summary":
            assert e.token_count == c.store.get_summary(e.ref_id).token_count


def test_async_swap_waits_for_boundary():
    gate = []

    def slow(req):
        while not gate:
            time.sleep(0.005)
        return req.last_content[:200]

    c, _ = controller([Rule(slow)], tau_soft=2_000, tau_hard=50_000)
    for _ in range(6):
        c.ingest_item("s", "user", text_of(500))
    assert c.has_pending("s")
    before = c.context("s").entries
    gate.append(1)
    time.sleep(0.05)
    # finished in the background but not yet visible
    assert c.context("s").entries == before
    node = c.between_turns("s")
    assert node is not None
    assert c.context("s").entries[0].ref_id == node.id


def test_stale_plan_discarded():
    c, _ = controller(tau_soft=2_000, tau_hard=50_000)
    for _ in range(6):
        c.ingest_item("s", "user", text_of(500))
    plan = c.plan_block(c.store.context_entries("s"))
    computed = c.summarize_plan("s", plan)
    c.compact_oldest_block("s")  # moves the block out from under the plan
    with pytest.raises(Exception):
        c.apply_plan("s", plan, computed)


def test_render_uses_annotations_and_stubs():
    c, _ = controller(tau_soft=2_000, tau_hard=3_000)
    c.ingest_many("s", [("user", text_of(500)) for _ in range(10)])
    rendered = c.render_context("s")
    node = c.store.get_summary(c.context("s").entries[0].ref_id)
    assert annotation(node) in rendered
    msgs = c.render_messages("s")
    assert len(msgs) == len(c.context("s"))


def test_drain_reaches_soft():
    c, _ = controller(tau_soft=3_000, tau_hard=30_000)
    c.ingest_many("s", [("user", text_of(800)) for _ in range(20)])
    c.drain("s")
    assert c.tokens("s") <= 3_000


@given(st.lists(st.integers(1, 3000), min_size=1, max_size=60), st.booleans())
def test_lossless_under_random_bursts(sizes, adversarial):
    rules = [Rule(inflate)] if adversarial else summary_rules()
    c, _ = controller(rules, tau_soft=3_000, tau_hard=6_000, wait_at_boundary=True)
    for i, n in enumerate(sizes):
        c.ingest_item("s", "user" if i % 2 else "assistant", f"<{i}>" + text_of(n))
        if i % 7 == 6:
            c.between_turns("s")
    c.drain("s")
    got = [m.id for m in recover_messages(c.store, "s")]
    assert got == [m.id for m in c.store.messages("s")]
    assert c.coverage_problems("s") == []
    assert c.store.validate_dag("s") == []
    assert c.tokens("s") <= 6_000 or len(c.context("s")) <= 2
    c.close()
