from lcm import ids


def test_prefix_and_kind_roundtrip():
    for kind, prefix in ids.PREFIXES.items():
        i = ids.new_id(kind)
        assert i.startswith(prefix + "_")
        assert ids.kind_of(i) == kind
    assert ids.kind_of("nope_123") is None


def test_monotonic_within_process():
    batch = [ids.ulid() for _ in range(5000)]
    assert batch == sorted(batch)
    assert len(set(batch)) == len(batch)
