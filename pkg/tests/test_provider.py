import json

import httpx
import pytest

from lcm.errors import ProviderError, ScriptError
from lcm.provider import (
    CompletionRequest,
    HttpProvider,
    ProviderSlots,
    Rule,
    ScriptedProvider,
    fail,
    load_script,
    make_request,
)


def req(mode="m", text="hello"):
    return make_request(mode, "sys", text)


def test_first_matching_rule_wins_and_echo_default():
    p = ScriptedProvider([Rule("A", mode="x"), Rule("B", pattern="hel+o")])
    assert p.complete(req("x")).text == "A"
    assert p.complete(req("y")).text == "B"
    assert p.complete(req("y", "bye")).text == "bye"
    assert [c.index for c in p.calls()] == [0, 1, 2]


def test_index_and_last_matching():
    p = ScriptedProvider([Rule("first", index=0), Rule("tail", last="^end")])
    assert p.complete(req(text="end")).text == "first"
    assert p.complete(req(text="end")).text == "tail"
    r = CompletionRequest("m", ({"role": "user", "content": "end"}, {"role": "user", "content": "x"}))
    assert p.complete(r).text == "x"


def test_failure_is_logged_and_raised():
    p = ScriptedProvider([Rule(fail("boom"))])
    with pytest.raises(ProviderError):
        p.complete(req())
    assert p.calls()[0].failed


def test_load_script(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text("\n".join([
        "# comment",
        json.dumps({"match": {"mode": "a"}, "respond": {"kind": "json", "value": {"final": 1}}}),
        json.dumps({"match": {"mode": "b"}, "respond": {"kind": "head", "tokens": 1}}),
        json.dumps({"match": {"mode": "c"}, "respond": {"kind": "error", "text": "nope"}}),
        json.dumps({"respond": {"kind": "inflate"}}),
    ]))
    p = load_script(path)
    assert json.loads(p.complete(req("a")).text) == {"final": 1}
    assert p.complete(req("b", "abcdefgh")).text == "abcd"
    with pytest.raises(ProviderError, match="nope"):
        p.complete(req("c"))
    assert len(p.complete(req("z", "ab")).text) > 2


@pytest.mark.parametrize("line,needle", [
    ("{not json", "invalid JSON"),
    (json.dumps({"match": {}, "respond": {"kind": "text", "text": "x"}, "extra": 1}), "unknown rule fields"),
    (json.dumps({"match": {"mod": "x"}, "respond": {"kind": "echo"}}), "unknown match fields"),
    (json.dumps({"respond": {"kind": "telepathy"}}), "unknown respond kind"),
    (json.dumps({"match": {"pattern": "("}, "respond": {"kind": "echo"}}), "bad match.pattern"),
])
def test_script_errors_name_line(tmp_path, line, needle):
    path = tmp_path / "s.jsonl"
    path.write_text(json.dumps({"respond": {"kind": "echo"}}) + "\n" + line + "\n")
    with pytest.raises(ScriptError, match=needle) as exc:
        load_script(path)
    assert exc.value.line == 2


def _http(handler):
    return HttpProvider("http://model/v1/chat/completions", model="m", api_key="k",
                        client=httpx.Client(transport=httpx.MockTransport(handler)))


def test_http_provider_roundtrip():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi there"}}]})

    out = _http(handler).complete(req(text="question"))
    assert out.text == "hi there"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["messages"][-1] == {"role": "user", "content": "question"}


@pytest.mark.parametrize("response", [
    httpx.Response(500, text="overloaded"),
    httpx.Response(200, json={"choices": []}),
    httpx.Response(200, text="not json"),
])
def test_http_provider_errors(response):
    with pytest.raises(ProviderError):
        _http(lambda r: response).complete(req())


def test_http_transport_error():
    def handler(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(ProviderError, match="transport"):
        _http(handler).complete(req())


def test_from_env(monkeypatch):
    monkeypatch.delenv("LCM_HTTP_ENDPOINT", raising=False)
    with pytest.raises(ProviderError):
        HttpProvider.from_env()
    monkeypatch.setenv("LCM_HTTP_ENDPOINT", "http://x")
    assert HttpProvider.from_env().endpoint == "http://x"


def test_slots():
    a, b = ScriptedProvider(), ScriptedProvider()
    assert ProviderSlots(a).slot("lightweight") is a
    assert ProviderSlots(a, b).slot("lightweight") is b
    with pytest.raises(KeyError):
        ProviderSlots(a).slot("huge")
