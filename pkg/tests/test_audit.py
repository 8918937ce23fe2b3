from lcm.audit import dag_stats, recover_messages, render_tree, roundtrip_problems, to_dot
from lcm.store import Store


def build():
    s = Store()
    for i in range(6):
        s.append_message("s", "user", f"m{i}")
    a = s.create_summary("s", "leaf", (1, 2), "a")
    b = s.create_summary("s", "leaf", (3, 4), "b")
    c = s.create_summary("s", "condensed", [a.id, b.id], "c")
    s.push_context_entry("s", _entry("summary", c.id, 1, 4))
    for seq in (5, 6):
        s.push_context_entry("s", _entry("raw_message", s.get_message_by_seq("s", seq).id, seq, seq))
    return s, a, b, c


def _entry(kind, ref, lo, hi):
    from lcm.models import ContextEntry

    return ContextEntry(kind, ref, 1, lo, hi)


def test_recover_and_roundtrip():
    s, *_ = build()
    assert [m.seq for m in recover_messages(s, "s")] == [1, 2, 3, 4, 5, 6]
    assert roundtrip_problems(s, "s") == []


def test_roundtrip_detects_gap():
    s, *_ = build()
    s.append_message("s", "user", "never entered the context")
    assert roundtrip_problems(s, "s")


def test_stats_and_rendering():
    s, a, b, c = build()
    st = dag_stats(s, "s")
    assert (st.summaries, st.leaves, st.condensed, st.depth, st.max_fanout) == (3, 2, 1, 2, 2)
    dot = to_dot(s, "s")
    assert dot.startswith("digraph") and f'"{c.id}" -> "{a.id}"' in dot
    tree = render_tree(s, "s").splitlines()
    assert tree[0].startswith(c.id) and tree[1].strip().startswith(a.id)
