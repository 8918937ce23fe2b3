"""ULID-style sortable identifiers with a short kind prefix (``msg_``, ``sum_``...)."""

from __future__ import annotations

import os
import threading
import time

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"

PREFIXES = {
    "session": "ses",
    "message": "msg",
    "summary": "sum",
    "file": "file",
    "job": "job",
}

_lock = threading.Lock()
_last_ms = -1
_last_rand = 0


def _encode(value: int, length: int) -> str:
    out = []
    for _ in range(length):
        out.append(_CROCKFORD[value & 31])
        value >>= 5
    return "".join(reversed(out))


def ulid() -> str:
    """26-char ULID; monotonic within one process even inside one millisecond."""
    global _last_ms, _last_rand
    with _lock:
        ms = int(time.time() * 1000)
        if ms <= _last_ms:
            ms = _last_ms
            _last_rand = (_last_rand + 1) & ((1 << 80) - 1)
        else:
            _last_ms = ms
            _last_rand = int.from_bytes(os.urandom(10), "big") >> 1
        return _encode(ms, 10) + _encode(_last_rand, 16)


def new_id(kind: str) -> str:
    return f"{PREFIXES[kind]}_{ulid()}"


def kind_of(identifier: str) -> str | None:
    prefix, _, rest = identifier.partition("_")
    if not rest:
        return None
    for kind, p in PREFIXES.items():
        if p == prefix:
            return kind
    return None
