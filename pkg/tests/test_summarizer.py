import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcm.provider import Rule, ScriptedProvider, fail, head, inflate
from lcm.summarizer import (
    ELISION_MARKER,
    EscalationRequest,
    Summarizer,
    default_target,
    deterministic_truncate,
    escalated_summary,
    input_tokens,
    load_prompt,
    make_request,
)
from lcm.tokenizer import count_tokens

from conftest import text_of


def test_default_target_floor_and_fraction():
    assert default_target(100) == 256
    assert default_target(2560) == 256
    assert default_target(10_000) == 1000


def test_level1_accepted_when_shorter():
    p = ScriptedProvider([Rule(head(50), mode="preserve_details")])
    res = escalated_summary(make_request([text_of(1000)]), p)
    assert res.level_used == "normal" and res.provider_calls == 1 and res.token_count == 50


def test_level2_after_level1_inflates():
    p = ScriptedProvider([Rule(inflate, mode="preserve_details"), Rule(head(40), mode="bullet_points")])
    res = escalated_summary(make_request([text_of(1000)]), p)
    assert res.level_used == "aggressive" and res.provider_calls == 2
    assert [c.mode_tag for c in p.calls()] == ["preserve_details", "bullet_points"]


def test_level2_target_is_half():
    seen = []

    def spy(req):
        seen.append(req.max_tokens)
        return req.last_content * 2

    p = ScriptedProvider([Rule(spy)])
    escalated_summary(EscalationRequest((text_of(3000),), 400), p)
    assert seen == [400, 200]


def test_provider_failure_counts_as_failed_level():
    p = ScriptedProvider([Rule(fail("down"))])
    res = escalated_summary(make_request([text_of(2000)]), p)
    assert res.level_used == "truncate" and res.provider_calls == 2
    assert res.token_count <= 512


def test_prompts_carry_target():
    for name in ("preserve_details", "bullet_points"):
        assert "{target_tokens}" in load_prompt(name)


def test_prompt_dir_override(tmp_path):
    (tmp_path / "preserve_details.txt").write_text("custom {target_tokens}")
    assert load_prompt("preserve_details", tmp_path) == "custom {target_tokens}"
    assert load_prompt("bullet_points", tmp_path) == load_prompt("bullet_points")


def test_request_validation():
    with pytest.raises(ValueError):
        EscalationRequest((), 10)
    with pytest.raises(ValueError):
        EscalationRequest(("x",), 0)


def test_truncate_keeps_head_and_tail():
    items = ["HEAD " + "x" * 8000, "y" * 8000 + " TAIL"]
    out = deterministic_truncate(items, 512)
    assert count_tokens(out) <= 512
    assert out.startswith("HEAD") and out.endswith("TAIL")
    assert "tokens elided" in out


def test_truncate_passthrough_when_small():
    assert deterministic_truncate(["a", "b"], 512) == "a\n\nb"


@given(st.lists(st.text(min_size=1), min_size=1, max_size=6), st.integers(1, 700))
def test_truncate_never_exceeds_budget(items, budget):
    assert count_tokens(deterministic_truncate(items, budget)) <= budget


@given(st.integers(513, 50_000), st.integers(0, 2**32))
def test_adversarial_escalation_converges(n_tokens, seed):
    rng = random.Random(seed)
    parts = []
    remaining = n_tokens
    while remaining > 0:
        k = min(remaining, rng.randint(1, 4000))
        parts.append(text_of(k, rng.choice(["alpha", "beta", "gamma"])))
        remaining -= k
    p = ScriptedProvider([Rule(inflate)])
    res = Summarizer(p).escalate(make_request(parts))
    assert res.token_count <= 512
    assert res.token_count < input_tokens(parts)
    assert res.provider_calls <= 2
