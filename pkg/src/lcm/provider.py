"""Text-generation backends.

``ScriptedProvider`` is the test instrument: ordered rules, first match wins,
every call logged. ``HttpProvider`` speaks the common chat-completions JSON
shape. The engine depends only on :class:`Provider`.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import httpx

from .errors import ProviderError, ScriptError
from .tokenizer import Tokenizer, clip_prefix, get_default_tokenizer


@dataclass(frozen=True)
class CompletionRequest:
    mode_tag: str
    messages: tuple[dict[str, str], ...]
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")

    @property
    def transcript(self) -> str:
        return "\n".join(m["content"] for m in self.messages)

    @property
    def last_content(self) -> str:
        return self.messages[-1]["content"]


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> Completion: ...


def make_request(mode_tag: str, system: str | None, user: str, max_tokens: int = 4096) -> CompletionRequest:
    messages: list[dict[str, str]] = []
    if system:
        messages.append({"role": "system", "content": system})
    messages.append({"role": "user", "content": user})
    return CompletionRequest(mode_tag, tuple(messages), max_tokens)


# -- scripted backend ------------------------------------------------------

Responder = Callable[[CompletionRequest], str]


@dataclass
class Rule:
    """``mode`` / ``pattern`` / ``last`` / ``index`` are ANDed; ``None`` means "any".

    ``pattern`` is searched in the concatenated message contents, ``last`` in
    the final message only; ``index`` is the 0-based global call index.
    """

    respond: str | Responder
    mode: str | None = None
    pattern: str | None = None
    index: int | None = None
    last: str | None = None
    _regex: re.Pattern[str] | None = field(default=None, init=False, repr=False)
    _last_regex: re.Pattern[str] | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.pattern is not None:
            self._regex = re.compile(self.pattern)
        if self.last is not None:
            self._last_regex = re.compile(self.last)

    def matches(self, request: CompletionRequest, call_index: int) -> bool:
        if self.mode is not None and self.mode != request.mode_tag:
            return False
        if self.index is not None and self.index != call_index:
            return False
        if self._regex is not None and not self._regex.search(request.transcript):
            return False
        if self._last_regex is not None and not self._last_regex.search(request.last_content):
            return False
        return True


@dataclass(frozen=True)
class CallRecord:
    index: int
    mode_tag: str
    input_hash: str
    input_tokens: int
    output_tokens: int
    failed: bool = False


class ScriptedFailure(Exception):
    """Raised by a responder to simulate a transport error."""


def echo(request: CompletionRequest) -> str:
    return request.last_content


def inflate(request: CompletionRequest) -> str:
    """Adversary: always longer than its input."""
    text = request.last_content
    return text + "\n" + text + " [padding]"


def head(n_tokens: int, tokenizer: Tokenizer | None = None) -> Responder:
    def respond(request: CompletionRequest) -> str:
        return clip_prefix(request.last_content, n_tokens, tokenizer)

    return respond


def fail(message: str = "scripted failure") -> Responder:
    def respond(request: CompletionRequest) -> str:
        raise ScriptedFailure(message)

    return respond


class ScriptedProvider:
    """Deterministic provider driven by ordered rules; thread-safe call log."""

    def __init__(self, rules: Sequence[Rule] = (), tokenizer: Tokenizer | None = None) -> None:
        self.rules = list(rules)
        if not any(r.mode is None and r.pattern is None and r.index is None and r.last is None for r in self.rules):
            self.rules.append(Rule(respond=echo))
        self.tokenizer = tokenizer or get_default_tokenizer()
        self.log: list[CallRecord] = []
        self._lock = threading.Lock()
        self._counter = 0

    def complete(self, request: CompletionRequest) -> Completion:
        with self._lock:
            index = self._counter
            self._counter += 1
        rule = next(r for r in self.rules if r.matches(request, index))
        input_tokens = self.tokenizer.count(request.transcript)
        digest = hashlib.sha256(request.transcript.encode("utf-8")).hexdigest()[:16]
        try:
            text = rule.respond(request) if callable(rule.respond) else rule.respond
        except (ScriptedFailure, ProviderError) as exc:
            with self._lock:
                self.log.append(CallRecord(index, request.mode_tag, digest, input_tokens, 0, failed=True))
            raise ProviderError(str(exc)) from None
        out_tokens = self.tokenizer.count(text)
        with self._lock:
            self.log.append(CallRecord(index, request.mode_tag, digest, input_tokens, out_tokens))
        return Completion(text, input_tokens, out_tokens)

    def calls(self, mode_tag: str | None = None) -> list[CallRecord]:
        with self._lock:
            return [c for c in self.log if mode_tag is None or c.mode_tag == mode_tag]

    @property
    def call_count(self) -> int:
        return len(self.log)


SUMMARY_MODES = ("preserve_details", "bullet_points")

_RULE_KEYS = {"match", "respond"}
_MATCH_KEYS = {"mode", "pattern", "last", "index"}
_RESPOND_KEYS = {"kind", "text", "tokens", "value"}
_RESPOND_KINDS = {"text", "json", "echo", "inflate", "head", "error"}


def _responder(spec: dict[str, Any], tokenizer: Tokenizer) -> str | Responder:
    kind = spec.get("kind", "text")
    if kind == "text":
        if not isinstance(spec.get("text"), str):
            raise ValueError("respond.kind=text needs a string 'text'")
        return spec["text"]
    if kind == "json":
        if "value" not in spec:
            raise ValueError("respond.kind=json needs 'value'")
        return json.dumps(spec["value"])
    if kind == "echo":
        return echo
    if kind == "inflate":
        return inflate
    if kind == "head":
        n = spec.get("tokens")
        if not isinstance(n, int) or n < 0:
            raise ValueError("respond.kind=head needs a non-negative integer 'tokens'")
        return head(n, tokenizer)
    if kind == "error":
        return fail(spec.get("text", "scripted failure"))
    raise ValueError(f"unknown respond kind {kind!r}; expected one of {sorted(_RESPOND_KINDS)}")


def parse_rule(obj: Any, tokenizer: Tokenizer | None = None) -> Rule:
    if not isinstance(obj, dict):
        raise ValueError("a rule must be a JSON object")
    unknown = set(obj) - _RULE_KEYS
    if unknown:
        raise ValueError(f"unknown rule fields: {sorted(unknown)}")
    match = obj.get("match", {})
    respond = obj.get("respond")
    if not isinstance(match, dict):
        raise ValueError("'match' must be an object")
    if not isinstance(respond, dict):
        raise ValueError("'respond' must be an object")
    if set(match) - _MATCH_KEYS:
        raise ValueError(f"unknown match fields: {sorted(set(match) - _MATCH_KEYS)}")
    if set(respond) - _RESPOND_KEYS:
        raise ValueError(f"unknown respond fields: {sorted(set(respond) - _RESPOND_KEYS)}")
    index = match.get("index")
    if index is not None and (not isinstance(index, int) or isinstance(index, bool)):
        raise ValueError("match.index must be an integer")
    try:
        return Rule(
            respond=_responder(respond, tokenizer or get_default_tokenizer()),
            mode=match.get("mode"),
            pattern=match.get("pattern"),
            index=index,
            last=match.get("last"),
        )
    except re.error as exc:
        raise ValueError(f"bad match.pattern: {exc}") from None


def load_script(path: str | Path, tokenizer: Tokenizer | None = None) -> ScriptedProvider:
    """Build a scripted provider from a JSONL rule file (blank lines and ``#`` comments skipped)."""
    path = Path(path)
    rules = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rules.append(parse_rule(json.loads(stripped), tokenizer))
        except json.JSONDecodeError as exc:
            raise ScriptError(str(path), lineno, f"invalid JSON: {exc.msg}") from None
        except ValueError as exc:
            raise ScriptError(str(path), lineno, str(exc)) from None
    return ScriptedProvider(rules, tokenizer)


# -- HTTP backend ----------------------------------------------------------


class HttpProvider:
    """Single POST per call to a chat-completions style endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
        tokenizer: Tokenizer | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.client = client or httpx.Client(timeout=timeout)
        self.tokenizer = tokenizer or get_default_tokenizer()

    @classmethod
    def from_env(cls, **kwargs: Any) -> HttpProvider:
        endpoint = os.environ.get("LCM_HTTP_ENDPOINT")
        if not endpoint:
            raise ProviderError("LCM_HTTP_ENDPOINT is not set")
        return cls(endpoint, model=os.environ.get("LCM_MODEL", "default"),
                   api_key=os.environ.get("LCM_API_KEY"), **kwargs)

    def complete(self, request: CompletionRequest) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "messages": list(request.messages), "max_tokens": request.max_tokens}
        try:
            resp = self.client.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ProviderError(f"transport error: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed response: {exc}") from exc
        if not isinstance(text, str):
            raise ProviderError("malformed response: content is not text")
        return Completion(text, self.tokenizer.count(request.transcript), self.tokenizer.count(text))


@dataclass
class ProviderSlots:
    """Named model slots; agent turns and summaries use ``primary``, map items ``lightweight``."""

    primary: Provider
    lightweight: Provider | None = None

    def slot(self, name: str) -> Provider:
        if name == "primary":
            return self.primary
        if name == "lightweight":
            return self.lightweight or self.primary
        raise KeyError(f"unknown provider slot {name!r}")
