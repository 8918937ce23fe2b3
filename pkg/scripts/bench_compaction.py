"""Replay synthetic transcripts of growing length and report DAG shape and timing.

    python3 scripts/bench_compaction.py --turns 100 200 400 --tau-soft 6000 --tau-hard 12000
"""

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from make_transcript import make_turns, provider_rules  # noqa: E402

from lcm.audit import dag_stats, roundtrip_problems  # noqa: E402
from lcm.controller import ControllerConfig  # noqa: E402
from lcm.provider import ScriptedProvider, parse_rule  # noqa: E402
from lcm.runtime import Engine, EngineConfig  # noqa: E402
from lcm.store import Store  # noqa: E402


def run(n_turns, tau_soft, tau_hard, seed, workdir):
    path = workdir / f"turns_{n_turns}.jsonl"
    turns = make_turns(n_turns, seed, big_every=50, big_dir=workdir)
    path.write_text("".join(json.dumps(t) + "\n" for t in turns))
    cfg = EngineConfig(controller=ControllerConfig(tau_soft=tau_soft, tau_hard=tau_hard, wait_at_boundary=True))
    eng = Engine(Store(), ScriptedProvider([parse_rule(r) for r in provider_rules()]), cfg)
    sid = eng.new_session()
    t0 = time.perf_counter()
    eng.replay_transcript(sid, path)
    elapsed = time.perf_counter() - t0
    stats = dag_stats(eng.store, sid)
    ok = not roundtrip_problems(eng.store, sid)
    ctx = eng.controller.tokens(sid)
    eng.close()
    return stats, ctx, elapsed, ok


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--turns", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--tau-soft", type=int, default=6_000)
    ap.add_argument("--tau-hard", type=int, default=12_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'turns':>6} {'summaries':>9} {'condensed':>9} {'depth':>5} {'fanout':>6} {'ctx tok':>8} {'sec':>6}  lossless")
    with tempfile.TemporaryDirectory() as tmp:
        for n in args.turns:
            s, ctx, sec, ok = run(n, args.tau_soft, args.tau_hard, args.seed, Path(tmp))
            print(f"{n:>6} {s.summaries:>9} {s.condensed:>9} {s.depth:>5} {s.mean_fanout:>6} {ctx:>8} {sec:>6.2f}  {ok}")


if __name__ == "__main__":
    main()
