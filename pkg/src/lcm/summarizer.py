"""Three-level summarization escalation.

Level 1 asks the provider for a detail-preserving summary, level 2 for terse
bullets at half the target, level 3 truncates deterministically to 512
tokens without any model call. The first level whose output is strictly
smaller than the input wins. Callers keep inputs above 512 tokens, which makes
level 3 a strict reduction by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import ProviderError
from .provider import CompletionRequest, Provider
from .tokenizer import Tokenizer, clip_prefix, clip_suffix, get_default_tokenizer

log = logging.getLogger(__name__)

TRUNCATE_BUDGET = 512
MIN_BLOCK_TOKENS = TRUNCATE_BUDGET + 1
TARGET_FRACTION = 0.10
TARGET_FLOOR = 256
HEAD_SHARE = 0.75
ITEM_SEPARATOR = "\n\n"
ELISION_MARKER = "\n[... {n} tokens elided ...]\n"


@dataclass(frozen=True)
class EscalationRequest:
    items: tuple[str, ...]
    target_tokens: int

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("nothing to summarize")
        if self.target_tokens < 1:
            raise ValueError("target_tokens must be positive")


@dataclass(frozen=True)
class EscalationResult:
    text: str
    token_count: int
    level_used: str
    provider_calls: int
    input_tokens: int


def input_tokens(items: Sequence[str], tokenizer: Tokenizer | None = None) -> int:
    tok = tokenizer or get_default_tokenizer()
    return sum(tok.count(t) for t in items)


def default_target(total_tokens: int) -> int:
    return max(TARGET_FLOOR, int(total_tokens * TARGET_FRACTION))


def make_request(items: Sequence[str], target_tokens: int | None = None,
                 tokenizer: Tokenizer | None = None) -> EscalationRequest:
    items = tuple(items)
    target = target_tokens or default_target(input_tokens(items, tokenizer))
    return EscalationRequest(items, target)


def load_prompt(name: str, prompt_dir: str | Path | None = None) -> str:
    """Packaged template ``name``.txt, or the same file under ``prompt_dir`` when it exists."""
    if prompt_dir is not None:
        candidate = Path(prompt_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files("lcm.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def deterministic_truncate(
    items: Sequence[str], budget_tokens: int = TRUNCATE_BUDGET, tokenizer: Tokenizer | None = None
) -> str:
    """Head/tail excerpt of the joined items within ``budget_tokens``; no model involved."""
    if budget_tokens < 1:
        raise ValueError("budget_tokens must be >= 1")
    tok = tokenizer or get_default_tokenizer()
    joined = ITEM_SEPARATOR.join(items)
    total = tok.count(joined)
    if total <= budget_tokens:
        return joined
    marker = ELISION_MARKER.format(n=total)
    room = budget_tokens - tok.count(marker)
    if room >= 2:
        head_budget = max(1, int(room * HEAD_SHARE))
        tail_budget = room - head_budget
        head = clip_prefix(joined, head_budget, tok)
        tail = clip_suffix(joined[len(head):], tail_budget, tok)
        out = head + marker + tail
        # tokenizers need not be subadditive; shrink until the joined form fits
        while tok.count(out) > budget_tokens and (head or tail):
            if tail:
                tail = tail[1:]
            else:
                head = head[:-1]
            out = head + marker + tail
        if tok.count(out) <= budget_tokens:
            return out
    return clip_prefix(joined, budget_tokens, tok)


class Summarizer:
    def __init__(
        self,
        provider: Provider,
        tokenizer: Tokenizer | None = None,
        prompt_dir: str | Path | None = None,
        truncate_budget: int = TRUNCATE_BUDGET,
    ) -> None:
        self.provider = provider
        self.tokenizer = tokenizer or get_default_tokenizer()
        self.prompt_dir = prompt_dir
        self.truncate_budget = truncate_budget

    def _llm(self, mode: str, items: Sequence[str], target: int) -> str | None:
        system = load_prompt(mode, self.prompt_dir).format(target_tokens=target)
        request = CompletionRequest(
            mode,
            ({"role": "system", "content": system}, {"role": "user", "content": ITEM_SEPARATOR.join(items)}),
            max_tokens=target,
        )
        try:
            return self.provider.complete(request).text
        except ProviderError as exc:
            log.warning("summarization level %s failed: %s", mode, exc)
            return None

    def escalate(self, request: EscalationRequest) -> EscalationResult:
        tok = self.tokenizer
        n_in = input_tokens(request.items, tok)
        calls = 0
        for level, mode, target in (
            ("normal", "preserve_details", request.target_tokens),
            ("aggressive", "bullet_points", max(1, request.target_tokens // 2)),
        ):
            text = self._llm(mode, request.items, target)
            calls += 1
            if text is not None:
                n_out = tok.count(text)
                if n_out < n_in:
                    return EscalationResult(text, n_out, level, calls, n_in)
        text = deterministic_truncate(request.items, self.truncate_budget, tok)
        return EscalationResult(text, tok.count(text), "truncate", calls, n_in)


def escalated_summary(
    request: EscalationRequest, provider: Provider, tokenizer: Tokenizer | None = None
) -> EscalationResult:
    return Summarizer(provider, tokenizer).escalate(request)
