"""Deterministic token counting.

The default counter is the ``ceil(utf8_bytes / 4)`` heuristic. Every
threshold in the engine is expressed in these units; a model-specific
tokenizer can be installed with :func:`set_default_tokenizer`, provided it
stays deterministic and monotone under concatenation.
"""

from __future__ import annotations

from typing import Protocol


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class ByteHeuristicTokenizer:
    """``ceil(len(text.encode('utf-8')) / bytes_per_token)``."""

    def __init__(self, bytes_per_token: int = 4) -> None:
        if bytes_per_token < 1:
            raise ValueError("bytes_per_token must be >= 1")
        self.bytes_per_token = bytes_per_token

    def count(self, text: str) -> int:
        n = len(text.encode("utf-8"))
        return -(-n // self.bytes_per_token)

    def __repr__(self) -> str:
        return f"ByteHeuristicTokenizer(bytes_per_token={self.bytes_per_token})"


_default: Tokenizer = ByteHeuristicTokenizer()


def get_default_tokenizer() -> Tokenizer:
    return _default


def set_default_tokenizer(tokenizer: Tokenizer) -> None:
    global _default
    _default = tokenizer


def count_tokens(text: str, tokenizer: Tokenizer | None = None) -> int:
    return (tokenizer or _default).count(text)


def clip_prefix(text: str, budget: int, tokenizer: Tokenizer | None = None) -> str:
    """Longest prefix of ``text`` whose token count is <= ``budget``.

    Binary search over character offsets; relies only on monotonicity.
    """
    tok = tokenizer or _default
    if budget <= 0:
        return ""
    if tok.count(text) <= budget:
        return text
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tok.count(text[:mid]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo]


def clip_suffix(text: str, budget: int, tokenizer: Tokenizer | None = None) -> str:
    """Longest suffix of ``text`` whose token count is <= ``budget``."""
    tok = tokenizer or _default
    if budget <= 0:
        return ""
    if tok.count(text) <= budget:
        return text
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if tok.count(text[len(text) - mid :]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return text[len(text) - lo :] if lo else ""
