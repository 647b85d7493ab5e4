"""AS graphs with business relationships, edge delays and vantage bindings.

Line format::

    node <asn>
    edge <asn> <asn> <p2c|p2p>          # p2c: the first AS is the provider
    vantage <asn> <source_id>
    delay default <fixed|uniform> <params...>
    delay edge <asn> <asn> <fixed|uniform> <params...>
    seed <n>
    source <source_id> <push|poll> [interval <sec>] [latency <fixed|uniform> <params...>]
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from ..delay import DEFAULT_EDGE_DELAY, DelayModel
from ..feeds import Archetype, SourceDescriptor


class TopologyError(ValueError):
    pass


class Rel(enum.IntEnum):
    """What a neighbor is to the local AS; values double as local preference."""

    PROVIDER = 0
    PEER = 1
    CUSTOMER = 2


@dataclass
class Topology:
    nodes: set[int] = field(default_factory=set)
    rel: dict[int, dict[int, Rel]] = field(default_factory=dict)
    default_delay: DelayModel = DEFAULT_EDGE_DELAY
    edge_delays: dict[tuple[int, int], DelayModel] = field(default_factory=dict)
    vantages: dict[int, list[str]] = field(default_factory=dict)
    sources: dict[str, SourceDescriptor] = field(default_factory=dict)
    source_specs: dict[str, dict] = field(default_factory=dict)
    seed: int = 0
    tiers: dict[int, int] = field(default_factory=dict)

    def add_node(self, asn: int) -> None:
        if asn < 0:
            raise TopologyError(f"negative ASN {asn}")
        self.nodes.add(asn)
        self.rel.setdefault(asn, {})

    def add_edge(self, a: int, b: int, kind: str) -> None:
        if a == b:
            raise TopologyError(f"self-loop on AS{a}")
        if kind == "p2c":
            ra, rb = Rel.CUSTOMER, Rel.PROVIDER
        elif kind == "p2p":
            ra, rb = Rel.PEER, Rel.PEER
        else:
            raise TopologyError(f"unknown relationship {kind!r}")
        self.add_node(a)
        self.add_node(b)
        existing = self.rel[a].get(b)
        if existing is not None:
            if existing is ra:
                return
            raise TopologyError(f"conflicting relationships for AS{a}-AS{b}")
        self.rel[a][b] = ra
        self.rel[b][a] = rb

    def relationship(self, local: int, neighbor: int) -> Rel:
        return self.rel[local][neighbor]

    def neighbors(self, asn: int) -> dict[int, Rel]:
        return self.rel[asn]

    def degree(self, asn: int) -> int:
        return len(self.rel[asn])

    def providers(self, asn: int) -> list[int]:
        return sorted(n for n, r in self.rel[asn].items() if r is Rel.PROVIDER)

    def customers(self, asn: int) -> list[int]:
        return sorted(n for n, r in self.rel[asn].items() if r is Rel.CUSTOMER)

    def peers(self, asn: int) -> list[int]:
        return sorted(n for n, r in self.rel[asn].items() if r is Rel.PEER)

    def edges(self) -> Iterator[tuple[int, int, str]]:
        """Each edge once: ``(provider, customer, 'p2c')`` or ``(low, high, 'p2p')``."""
        for a in sorted(self.nodes):
            for b, r in sorted(self.rel[a].items()):
                if r is Rel.CUSTOMER:
                    yield a, b, "p2c"
                elif r is Rel.PEER and a < b:
                    yield a, b, "p2p"

    def edge_count(self) -> int:
        return sum(len(n) for n in self.rel.values()) // 2

    def delay_for(self, a: int, b: int) -> DelayModel:
        return self.edge_delays.get((min(a, b), max(a, b)), self.default_delay)

    def bind_vantage(self, asn: int, source_id: str) -> None:
        bound = self.vantages.setdefault(asn, [])
        if source_id not in bound:
            bound.append(source_id)

    def vantage_asns(self, source_id: str) -> list[int]:
        return sorted(a for a, ids in self.vantages.items() if source_id in ids)

    def source_ids(self) -> list[str]:
        ids = {s for bound in self.vantages.values() for s in bound}
        return sorted(ids)

    def resolve_sources(self) -> dict[str, SourceDescriptor]:
        """Descriptors for every bound source; undeclared ones default to push, zero latency."""
        out = {}
        for sid in self.source_ids():
            spec = self.source_specs.get(sid, {})
            archetype = spec.get("archetype", Archetype.PUSH_STREAM)
            out[sid] = SourceDescriptor(
                sid, archetype, self.vantage_asns(sid),
                poll_interval=spec.get("interval"),
                per_event_latency=spec.get("latency", DelayModel.fixed(0)),
            )
        return out

    def declare_source(self, source_id: str, archetype: Archetype,
                       interval: Optional[float] = None, latency: Optional[DelayModel] = None) -> None:
        spec = {"archetype": archetype}
        if interval is not None:
            spec["interval"] = interval
        if latency is not None:
            spec["latency"] = latency
        self.source_specs[source_id] = spec

    def has_provider_cycle(self) -> bool:
        state: dict[int, int] = {}
        for start in sorted(self.nodes):
            if start in state:
                continue
            stack = [(start, iter(self.providers(start)))]
            state[start] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[node] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    return True
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter(self.providers(nxt))))
        return False

    def validate(self) -> None:
        for asn in self.vantages:
            if asn not in self.nodes:
                raise TopologyError(f"vantage AS{asn} is not in the topology")
        for model in [self.default_delay, *self.edge_delays.values()]:
            if model.low <= 0:
                raise TopologyError("edge delays must be strictly positive")
        for (a, b) in self.edge_delays:
            if b not in self.rel.get(a, {}):
                raise TopologyError(f"delay given for missing edge AS{a}-AS{b}")
        for sid, spec in self.source_specs.items():
            if sid not in self.source_ids():
                raise TopologyError(f"source {sid!r} declared without vantages")
            if spec["archetype"] is Archetype.POLLING_SNAPSHOT and not spec.get("interval"):
                raise TopologyError(f"polling source {sid!r} needs an interval")

    def format(self) -> str:
        lines = [f"seed {self.seed}"]
        lines += [f"node {a}" for a in sorted(self.nodes)]
        lines += [f"edge {a} {b} {k}" for a, b, k in self.edges()]
        lines.append("delay default " + " ".join(self.default_delay.tokens()))
        for (a, b), model in sorted(self.edge_delays.items()):
            lines.append(f"delay edge {a} {b} " + " ".join(model.tokens()))
        for sid, spec in sorted(self.source_specs.items()):
            words = [f"source {sid} {spec['archetype'].value}"]
            if spec.get("interval") is not None:
                words.append(f"interval {spec['interval']:g}")
            if spec.get("latency") is not None:
                words.append("latency " + " ".join(spec["latency"].tokens()))
            lines.append(" ".join(words))
        for asn in sorted(self.vantages):
            lines += [f"vantage {asn} {sid}" for sid in self.vantages[asn]]
        return "\n".join(lines) + "\n"


def parse_topology(text: str, source: str = "<topology>") -> Topology:
    topo = Topology()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        where = f"{source}:{lineno}"
        try:
            _apply_line(topo, words)
        except TopologyError as exc:
            raise TopologyError(f"{where}: {exc}") from None
        except (ValueError, IndexError) as exc:
            raise TopologyError(f"{where}: cannot parse {line!r} ({exc})") from None
    topo.validate()
    return topo


def _apply_line(topo: Topology, words: list[str]) -> None:
    head = words[0]
    if head == "node" and len(words) == 2:
        topo.add_node(int(words[1]))
    elif head == "edge" and len(words) == 4:
        topo.add_edge(int(words[1]), int(words[2]), words[3])
    elif head == "vantage" and len(words) == 3:
        topo.bind_vantage(int(words[1]), words[2])
    elif head == "seed" and len(words) == 2:
        topo.seed = int(words[1])
    elif head == "delay" and len(words) >= 3:
        if words[1] == "default":
            topo.default_delay = DelayModel.parse(words[2:])
        elif words[1] == "edge" and len(words) >= 5:
            a, b = int(words[2]), int(words[3])
            topo.edge_delays[(min(a, b), max(a, b))] = DelayModel.parse(words[4:])
        else:
            raise TopologyError(f"bad delay line {' '.join(words)!r}")
    elif head == "source" and len(words) >= 3:
        archetype = Archetype(words[2])
        interval = latency = None
        rest = words[3:]
        while rest:
            if rest[0] == "interval":
                interval = float(rest[1])
                rest = rest[2:]
            elif rest[0] == "latency":
                n = 2 if rest[1] == "fixed" else 3
                latency = DelayModel.parse(rest[1:1 + n])
                rest = rest[1 + n:]
            else:
                raise TopologyError(f"unknown source option {rest[0]!r}")
        topo.declare_source(words[1], archetype, interval, latency)
    else:
        raise TopologyError(f"unrecognized line {' '.join(words)!r}")


def build_topology(path) -> Topology:
    path = Path(path)
    return parse_topology(path.read_text(), source=str(path))


@dataclass(frozen=True)
class HierarchyParams:
    tier1: int = 8
    tier2: int = 90
    tier3: int = 400
    tier2_providers: tuple[int, int] = (1, 3)
    tier3_providers: tuple[int, int] = (1, 2)
    tier2_peering: float = 0.05
    tier3_peering: float = 0.002
    first_asn: int = 1

    @property
    def size(self) -> int:
        return self.tier1 + self.tier2 + self.tier3


@dataclass
class GeneratedTopology:
    topology: Topology
    params: HierarchyParams
    p2c_edges: int
    p2p_edges: int


def generate_hierarchy(params: HierarchyParams = HierarchyParams(), seed: int = 0) -> GeneratedTopology:
    """Three-tier Internet-like hierarchy.

    Tier-1 ASes form a full peering clique; every lower AS buys transit
    from ASes earlier in the ordering, so the customer-provider graph is
    acyclic and every pair of ASes has a valley-free path.
    """
    if params.tier1 < 1:
        raise TopologyError("need at least one tier-1 AS")
    rng = random.Random(seed)
    topo = Topology(seed=seed)
    asn = params.first_asn
    t1 = list(range(asn, asn + params.tier1))
    t2 = list(range(t1[-1] + 1, t1[-1] + 1 + params.tier2))
    t3_start = (t2[-1] if t2 else t1[-1]) + 1
    t3 = list(range(t3_start, t3_start + params.tier3))
    p2c = p2p = 0
    for tier, group in ((1, t1), (2, t2), (3, t3)):
        for a in group:
            topo.add_node(a)
            topo.tiers[a] = tier
    for i, a in enumerate(t1):
        for b in t1[i + 1:]:
            topo.add_edge(a, b, "p2p")
            p2p += 1
    for i, a in enumerate(t2):
        pool = t1 + t2[:i]
        # bias toward the core so the hierarchy stays shallow
        weights = [4.0 if topo.tiers[x] == 1 else 1.0 for x in pool]
        k = min(len(pool), rng.randint(*params.tier2_providers))
        for prov in _weighted_sample(rng, pool, weights, k):
            topo.add_edge(prov, a, "p2c")
            p2c += 1
    for i, a in enumerate(t2):
        for b in t2[i + 1:]:
            if b not in topo.rel[a] and rng.random() < params.tier2_peering:
                topo.add_edge(a, b, "p2p")
                p2p += 1
    transit = t2 or t1
    for a in t3:
        k = min(len(transit), rng.randint(*params.tier3_providers))
        for prov in rng.sample(transit, k):
            topo.add_edge(prov, a, "p2c")
            p2c += 1
    if params.tier3_peering > 0:
        for i, a in enumerate(t3):
            for b in t3[i + 1:]:
                if rng.random() < params.tier3_peering:
                    topo.add_edge(a, b, "p2p")
                    p2p += 1
    return GeneratedTopology(topo, params, p2c, p2p)


def _weighted_sample(rng: random.Random, pool: list[int], weights: list[float], k: int) -> list[int]:
    chosen: list[int] = []
    pool, weights = list(pool), list(weights)
    for _ in range(k):
        pick = rng.choices(range(len(pool)), weights=weights)[0]
        chosen.append(pool.pop(pick))
        weights.pop(pick)
    return chosen


@dataclass(frozen=True)
class SiteProfile:
    """Connectivity for an experiment AS attached to a generated graph."""

    name: str
    providers: int
    peers: int


SITE_PROFILES = {
    # loosely after an exchange-point site, a regional network and a campus
    "ixp": SiteProfile("ixp", providers=2, peers=100),
    "regional": SiteProfile("regional", providers=4, peers=15),
    "stub": SiteProfile("stub", providers=2, peers=3),
    "single": SiteProfile("single", providers=1, peers=0),
    "dual": SiteProfile("dual", providers=2, peers=0),
}


def attach_site(topo: Topology, asn: int, profile: SiteProfile, seed: int,
                exclude: tuple[int, ...] = ()) -> None:
    """Add ``asn`` as a customer of tier-2 transit ASes, peering with non-core ASes."""
    if asn in topo.nodes:
        raise TopologyError(f"AS{asn} already present")
    rng = random.Random(f"{seed}|site|{asn}")
    transit = sorted(a for a, t in topo.tiers.items() if t == 2) or sorted(
        a for a, t in topo.tiers.items() if t == 1)
    others = sorted(a for a, t in topo.tiers.items() if t in (2, 3) and a not in exclude)
    topo.add_node(asn)
    topo.tiers[asn] = 4
    # shuffled prefixes: under one seed a smaller profile's neighbors are a subset of a larger one's
    rng.shuffle(transit)
    providers = transit[:profile.providers]
    for prov in providers:
        topo.add_edge(prov, asn, "p2c")
    candidates = [a for a in others if a not in providers]
    rng.shuffle(candidates)
    for peer in candidates[:profile.peers]:
        topo.add_edge(asn, peer, "p2p")


def bind_default_sources(topo: Topology, exclude: tuple[int, ...] = (),
                         stream_a: int = 43, stream_b: int = 4, lg_pool: int = 18,
                         poll_interval: float = 60.0) -> None:
    """Vantages chosen by degree rank; experiment ASes are never vantages.

    stream-a takes the even ranks of the top ``2*stream_a`` (a large
    collector-peer set), stream-b the first few odd ranks (a handful of
    exchange-point collectors), lg-pool an even spread over all ranks.
    """
    ranked = sorted((a for a in topo.nodes if a not in exclude), key=lambda a: (-topo.degree(a), a))
    a_set = ranked[0:2 * stream_a:2]
    b_set = ranked[1:2 * stream_b:2]
    step = max(1, len(ranked) // lg_pool)
    lg_set = ranked[step // 2::step][:lg_pool]
    for asn in a_set:
        topo.bind_vantage(asn, "stream-a")
    for asn in b_set:
        topo.bind_vantage(asn, "stream-b")
    for asn in lg_set:
        topo.bind_vantage(asn, "lg-pool")
    topo.declare_source("stream-a", Archetype.PUSH_STREAM, latency=DelayModel("uniform", 200, 2000))
    topo.declare_source("stream-b", Archetype.PUSH_STREAM, latency=DelayModel("uniform", 500, 3000))
    topo.declare_source("lg-pool", Archetype.POLLING_SNAPSHOT, interval=poll_interval)
