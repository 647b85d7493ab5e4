import random

import pytest

from hijackguard.prefix import IpPrefix, parse_prefix
from hijackguard.simnet.topology import Topology


def P(text):
    return parse_prefix(text)


def random_prefix(rng, min_len=0, max_len=32):
    length = rng.randint(min_len, max_len)
    base = rng.getrandbits(32) & (((1 << length) - 1) << (32 - length)) if length else 0
    return IpPrefix(base, length)


def random_graph(n, seed, providers=(1, 3), peer_prob=0.02):
    """Random acyclic customer-provider graph plus random peering, connected."""
    rng = random.Random(seed)
    topo = Topology(seed=seed)
    topo.add_node(1)
    for asn in range(2, n + 1):
        k = min(asn - 1, rng.randint(*providers))
        for prov in rng.sample(range(1, asn), k):
            topo.add_edge(prov, asn, "p2c")
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if b not in topo.rel[a] and rng.random() < peer_prob:
                topo.add_edge(a, b, "p2p")
    return topo


@pytest.fixture
def rng():
    return random.Random(1234)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        terminalreporter.write_line(ACCEPTANCE[key])
