import random

import pytest
from hypothesis import given, settings, strategies as st

from hijackguard.prefix import (IpPrefix, OutcomeKind, PrefixError, PrefixTrie, contains, deaggregate,
                                format_prefix, forwarding_origins, parse_prefix)

from conftest import P, random_prefix


@st.composite
def prefixes(draw, min_len=0, max_len=32):
    length = draw(st.integers(min_len, max_len))
    bits = draw(st.integers(0, (1 << length) - 1)) if length else 0
    return IpPrefix(bits << (32 - length) if length else 0, length)


def test_parse_example():
    p = parse_prefix("184.164.228.0/23")
    assert p.length == 23
    assert p.base == (184 << 24) | (164 << 16) | (228 << 8)
    assert str(p) == "184.164.228.0/23"


def test_parse_default_route():
    p = parse_prefix("0.0.0.0/0")
    assert (p.base, p.length) == (0, 0)
    assert p.size == 1 << 32


@pytest.mark.parametrize("text", ["184.164.228.0/33", "184.164.229.0/23", "256.0.0.0/8", "10.0.0/8",
                                  "10.0.0.0", "10.0.0.0/-1", "01.0.0.0/8x", "1.2.3.4/8"])
def test_parse_rejects(text):
    with pytest.raises(PrefixError):
        parse_prefix(text)


def test_constructor_rejects_host_bits():
    with pytest.raises(PrefixError):
        IpPrefix(1, 31)


def test_contains_examples():
    assert contains(P("184.164.228.0/22"), P("184.164.228.0/23"))
    assert not contains(P("184.164.228.0/23"), P("184.164.228.0/22"))
    assert not contains(P("184.164.228.0/24"), P("184.164.229.0/24"))
    assert contains(P("0.0.0.0/0"), P("1.2.3.4/32"))


@given(prefixes())
def test_contains_reflexive(p):
    assert contains(p, p)


@given(prefixes(0, 8), prefixes(0, 8))
def test_contains_antisymmetric(a, b):
    if contains(a, b) and contains(b, a):
        assert a == b


@given(prefixes(0, 6), prefixes(0, 6), prefixes(0, 6))
def test_contains_transitive(a, b, c):
    if contains(a, b) and contains(b, c):
        assert contains(a, c)


@given(prefixes())
def test_format_parse_roundtrip(p):
    assert parse_prefix(format_prefix(p)) == p


@given(prefixes(0, 12), prefixes(0, 12))
def test_overlap_iff_one_contains_other(a, b):
    assert a.overlaps(b) == (contains(a, b) or contains(b, a))


def test_trie_examples():
    trie = PrefixTrie([(P("184.164.228.0/22"), "X")])
    assert trie.longest_match(P("184.164.228.0/23")) == (P("184.164.228.0/22"), "X")
    assert PrefixTrie().longest_match(P("1.2.3.0/24")) is None
    trie = PrefixTrie([(P("10.0.0.0/8"), "A"), (P("10.0.0.0/24"), "B")])
    assert trie.longest_match(P("10.0.0.0/24")) == (P("10.0.0.0/24"), "B")
    assert trie.longest_match(P("10.0.1.0/24")) == (P("10.0.0.0/8"), "A")
    assert trie.longest_match(P("11.0.0.0/24")) is None


def test_trie_insert_get_remove():
    trie = PrefixTrie()
    trie.insert(P("10.0.0.0/8"), 1)
    trie.insert(P("10.0.0.0/8"), 2)
    assert len(trie) == 1 and trie[P("10.0.0.0/8")] == 2
    assert P("10.0.0.0/16") not in trie
    with pytest.raises(KeyError):
        trie.remove(P("10.0.0.0/16"))
    assert trie.remove(P("10.0.0.0/8")) == 2
    assert len(trie) == 0 and trie.longest_match(P("10.1.0.0/16")) is None


def _brute(entries, query):
    best = None
    for p, v in entries.items():
        if contains(p, query) and (best is None or p.length > best[0].length):
            best = (p, v)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_trie_matches_brute_force(seed):
    rng = random.Random(seed)
    # a narrow address region so that nesting is common
    entries = {}
    while len(entries) < 1200:
        p = random_prefix(rng, 0, 24)
        p = IpPrefix((10 << 24 | p.base >> 8) & ~((1 << (32 - max(p.length, 8))) - 1) & 0xFFFFFFFF,
                     max(p.length, 8))
        entries[p] = rng.random()
    trie = PrefixTrie(entries.items())
    assert len(trie) == len(entries)
    for _ in range(2000):
        q = random_prefix(rng, 8, 32)
        q = IpPrefix((10 << 24) | (q.base >> 8 & ~((1 << (32 - q.length)) - 1)), q.length)
        assert trie.longest_match(q) == _brute(entries, q)
    assert dict(trie.items()) == entries


def test_trie_covering_and_items_within():
    trie = PrefixTrie([(P("10.0.0.0/8"), 1), (P("10.1.0.0/16"), 2), (P("10.1.2.0/24"), 3), (P("11.0.0.0/8"), 4)])
    assert [p for p, _ in trie.covering(P("10.1.2.0/24"))] == [P("10.0.0.0/8"), P("10.1.0.0/16"), P("10.1.2.0/24")]
    assert {p for p, _ in trie.items(within=P("10.1.0.0/16"))} == {P("10.1.0.0/16"), P("10.1.2.0/24")}


def test_deaggregate_examples():
    out = deaggregate(P("184.164.228.0/23"))
    assert out.kind is OutcomeKind.SPLIT
    assert out.prefixes == (P("184.164.228.0/24"), P("184.164.229.0/24"))
    assert deaggregate(P("184.164.228.0/24")).kind is OutcomeKind.FILTERED_FLOOR
    assert deaggregate(P("184.164.228.0/24")).prefixes == ()
    assert deaggregate(P("10.0.0.0/22")).prefixes == (P("10.0.0.0/23"), P("10.0.2.0/23"))


def test_deaggregate_custom_floor():
    assert deaggregate(P("10.0.0.0/22"), floor_length=22).kind is OutcomeKind.FILTERED_FLOOR
    assert deaggregate(P("10.0.0.0/24"), floor_length=25).is_split


@settings(max_examples=300)
@given(prefixes(0, 23))
def test_deaggregate_halves_property(p):
    a, b = deaggregate(p).prefixes
    assert a.length == b.length == p.length + 1
    assert not a.overlaps(b)
    assert contains(p, a) and contains(p, b)
    assert a.size + b.size == p.size


def test_forwarding_origins():
    target = P("184.164.228.0/23")
    routes = {P("184.164.228.0/22"): 1, target: 2}
    assert forwarding_origins(routes, target) == {2}
    routes[P("184.164.228.0/24")] = 1
    assert forwarding_origins(routes, target) == {1, 2}
    routes[P("184.164.229.0/24")] = 1
    assert forwarding_origins(routes, target) == {1}
    assert forwarding_origins({P("184.164.228.0/24"): 1}, target) == {1, None}
    assert forwarding_origins({}, target) == {None}
