"""Generate a synthetic scripted-turns file plus a matching provider script.

Turns alternate short user prompts with occasional large tool outputs so that
a small tau forces repeated compaction.

    python scripts/make_transcript.py --turns 200 --out runs/t200
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

WORDS = ("alpha beta gamma delta epsilon zeta theta kappa lambda sigma omega vector index cache "
         "parser token ledger window branch commit module socket buffer").split()


def sentence(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n))


def make_turns(n_turns: int, seed: int = 0, tool_every: int = 5, tool_tokens: int = 1500,
               big_every: int = 0, big_dir: Path | None = None, big_tokens: int = 30_000) -> list[dict[str, str]]:
    rng = random.Random(seed)
    turns: list[dict[str, str]] = []
    for i in range(n_turns):
        if big_every and big_dir is not None and i % big_every == big_every - 1:
            path = big_dir / f"big_{i:04d}.log"
            lines = []
            while sum(len(x) + 1 for x in lines) < big_tokens * 4:
                lines.append(f"{len(lines):06d} {sentence(rng, 12)}")
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            turns.append({"user": f"turn {i}: inspect the attached log", "tool_result_file": str(path)})
        elif tool_every and i % tool_every == tool_every - 1:
            body = "\n".join(f"[{i}:{k}] {sentence(rng, 10)}" for k in range(tool_tokens * 4 // 70))
            turns.append({"user": f"turn {i}: tool output follows\n{body}"})
        else:
            turns.append({"user": f"turn {i}: {sentence(rng, rng.randint(20, 120))}"})
    return turns


def provider_rules(summary_tokens: int = 120) -> list[dict]:
    return [
        {"match": {"mode": "preserve_details"}, "respond": {"kind": "head", "tokens": summary_tokens}},
        {"match": {"mode": "bullet_points"}, "respond": {"kind": "head", "tokens": summary_tokens // 2}},
        {"match": {"mode": "agent_turn"}, "respond": {"kind": "json", "value": {"final": "ack"}}},
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--turns", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--big-every", type=int, default=0, help="attach a 30k-token file every k turns")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    turns = make_turns(args.turns, args.seed, big_every=args.big_every, big_dir=args.out)
    (args.out / "turns.jsonl").write_text("".join(json.dumps(t) + "\n" for t in turns), encoding="utf-8")
    (args.out / "provider.jsonl").write_text("".join(json.dumps(r) + "\n" for r in provider_rules()),
                                             encoding="utf-8")
    print(f"wrote {len(turns)} turns to {args.out / 'turns.jsonl'}")


if __name__ == "__main__":
    main()
