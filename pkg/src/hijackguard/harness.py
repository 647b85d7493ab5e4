"""Experiment pipeline: simulator feeds -> detector -> mitigator, sweeps and CSV output."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .delay import derive_seed
from .detector import Detector, HijackAlarm, OwnedPrefixTable, detection_delay, per_source_delays
from .feeds import FeedEvent
from .mitigator import Mitigator
from .prefix import DEFAULT_FLOOR, IpPrefix, parse_prefix
from .simnet.engine import DEFAULT_ROUTER_DELAY_MS, EventTrace, SimnetRouter, Simulator
from .simnet.engine import run as simulate
from .simnet.metrics import infection_series, recovery_time
from .simnet.scenario import MitigationPolicy, Scenario
from .simnet.topology import (SITE_PROFILES, HierarchyParams, SiteProfile, Topology, attach_site,
                              bind_default_sources, generate_hierarchy)

log = logging.getLogger(__name__)

LEGITIMATE_ASN = 61574
HIJACKER_ASN = 61575
DEFAULT_HIJACKED = parse_prefix("184.164.228.0/23")


class SweepError(ValueError):
    pass


class Pipeline:
    """Feed consumer wired into a running simulation."""

    def __init__(self, table: OwnedPrefixTable, scenario: Scenario,
                 router_delay_ms: int = DEFAULT_ROUTER_DELAY_MS, alarm_log=None):
        self.table = table
        self.scenario = scenario
        self.router_delay_ms = router_delay_ms
        self.detector = Detector(table, alarm_log=alarm_log)
        self.mitigator: Optional[Mitigator] = None
        self.alarms: list[HijackAlarm] = []

    def __call__(self, event: FeedEvent, sim: Simulator) -> None:
        if self.mitigator is None:
            router = SimnetRouter(sim, self.scenario.legitimate_asn, self.router_delay_ms)
            self.mitigator = Mitigator(self.table, router, self.scenario.floor)
        self.mitigator.observe(event)
        alarm = self.detector.process(event)
        if alarm is None:
            return
        self.alarms.append(alarm)
        sim.mark("detection", alarm.first_seen)
        policy = self.scenario.mitigation
        if not policy.enabled:
            return
        if policy.mode == "defer":
            sim.call_at(sim.now + policy.defer_ms, lambda: self.mitigator.respond(alarm, sim.now))
        else:
            self.mitigator.respond(alarm, sim.now)


@dataclass
class ExperimentResult:
    scenario_id: str
    seed: int
    sources: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)
    per_source_delay: dict[str, int] = field(default_factory=dict)
    detection_delay: Optional[int] = None
    t_start: Optional[int] = None
    t_total: Optional[int] = None
    series: list[tuple[int, float]] = field(default_factory=list)
    alarm_kind: Optional[str] = None
    escalated: bool = False
    error: Optional[str] = None
    trace: Optional[EventTrace] = field(default=None, repr=False, compare=False)

    @property
    def detected(self) -> bool:
        return self.detection_delay is not None

    @property
    def peak_infected(self) -> float:
        return max((f for _, f in self.series), default=0.0)

    @property
    def final_infected(self) -> float:
        return self.series[-1][1] if self.series else 0.0

    def infected_at(self, t: int) -> float:
        value = 0.0
        for time, frac in self.series:
            if time > t:
                break
            value = frac
        return value


def run_experiment(topology: Topology, scenario: Scenario, seed: int, scenario_id: str = "scenario",
                   params: Optional[dict] = None, keep_trace: bool = False,
                   router_delay_ms: int = DEFAULT_ROUTER_DELAY_MS, alarm_log=None,
                   speed_factor: Optional[float] = None) -> ExperimentResult:
    table = OwnedPrefixTable([(scenario.legitimate_prefix, scenario.legitimate_origins)])
    pipeline = Pipeline(table, scenario, router_delay_ms, alarm_log=alarm_log)
    trace = simulate(topology, scenario, seed=seed, consumer=pipeline, router_delay_ms=router_delay_ms,
                     speed_factor=speed_factor)
    result = ExperimentResult(scenario_id, seed, sources=tuple(topology.source_ids()),
                              params=dict(params or {}), trace=trace if keep_trace else None)
    hijack_start = trace.markers.get("hijack_start")
    if hijack_start is None:
        return result
    alarm = _scenario_alarm(pipeline, scenario)
    if alarm is not None:
        result.alarm_kind = alarm.kind.value
        result.detection_delay = detection_delay(alarm, hijack_start)
        result.per_source_delay = per_source_delays(pipeline.detector, alarm, hijack_start)
    mitigation_start = trace.markers.get("mitigation_start")
    if mitigation_start is not None:
        result.t_start = mitigation_start - hijack_start
    series = infection_series(trace, start=hijack_start)
    result.series = [(t - hijack_start, f) for t, f in series]
    if mitigation_start is not None:
        recovered = recovery_time(series, mitigation_start)
        if recovered is not None:
            result.t_total = recovered - hijack_start
    mitigator = pipeline.mitigator
    result.escalated = bool(mitigator and mitigator.escalations)
    return result


def _scenario_alarm(pipeline: Pipeline, scenario: Scenario) -> Optional[HijackAlarm]:
    key = (scenario.hijacked_prefix, scenario.hijacker_asn)
    if key in pipeline.detector.alarms:
        return pipeline.detector.alarms[key]
    return pipeline.alarms[0] if pipeline.alarms else None


@dataclass(frozen=True)
class Cell:
    attack: str
    hijacker_site: str
    legit_providers: int
    mitigation: MitigationPolicy

    @property
    def id(self) -> str:
        return f"{self.attack}/{self.hijacker_site}/p{self.legit_providers}/{self.mitigation.label()}"

    def params(self) -> dict:
        return {"attack": self.attack, "hijacker_site": self.hijacker_site,
                "legit_providers": self.legit_providers, "mitigation": self.mitigation.label()}


@dataclass
class SweepSpec:
    """Axes of a scenario sweep; every repetition index shares one seed across cells."""

    hijacker_sites: list[str] = field(default_factory=lambda: ["ixp", "stub"])
    legit_providers: list[int] = field(default_factory=lambda: [1, 2])
    attacks: list[str] = field(default_factory=lambda: ["exact", "subprefix"])
    mitigations: list[MitigationPolicy] = field(default_factory=lambda: [MitigationPolicy("immediate")])
    repetitions: int = 10
    master_seed: int = 0
    hierarchy: HierarchyParams = HierarchyParams()
    hijacked_prefix: IpPrefix = DEFAULT_HIJACKED
    poll_interval: float = 60.0
    floor: int = DEFAULT_FLOOR

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise SweepError("repetitions must be >= 1")
        for site in self.hijacker_sites:
            if site not in SITE_PROFILES:
                raise SweepError(f"unknown hijacker site {site!r}; known: {', '.join(SITE_PROFILES)}")
        for attack in self.attacks:
            if attack not in ("exact", "subprefix"):
                raise SweepError(f"unknown attack {attack!r}")
        if any(p < 1 for p in self.legit_providers):
            raise SweepError("legitimate AS needs at least one provider")
        if "subprefix" in self.attacks and self.hijacked_prefix.length == 0:
            raise SweepError("a /0 cannot be a sub-prefix")
        if not self.cells():
            raise SweepError("sweep has no cells")

    def cells(self) -> list[Cell]:
        return [Cell(a, s, p, m) for a, s, p, m in itertools.product(
            self.attacks, self.hijacker_sites, self.legit_providers, self.mitigations)]

    def seed_for(self, repetition: int) -> int:
        return derive_seed(self.master_seed, "rep", repetition)


def build_instance(spec: SweepSpec, cell: Cell, seed: int) -> tuple[Topology, Scenario]:
    topology = generate_hierarchy(spec.hierarchy, seed).topology
    # vantages are ranked on the base graph so they do not depend on the cell
    bind_default_sources(topology, poll_interval=spec.poll_interval)
    attach_site(topology, LEGITIMATE_ASN, SiteProfile("legitimate", cell.legit_providers, 0), seed)
    attach_site(topology, HIJACKER_ASN, SITE_PROFILES[cell.hijacker_site], seed, exclude=(LEGITIMATE_ASN,))
    hijacked = spec.hijacked_prefix
    if cell.attack == "exact":
        owned = hijacked
    else:
        owned = IpPrefix(hijacked.base & ~((1 << (33 - hijacked.length)) - 1) & 0xFFFFFFFF, hijacked.length - 1)
    scenario = Scenario(LEGITIMATE_ASN, owned, (LEGITIMATE_ASN,), HIJACKER_ASN, hijacked,
                        mitigation=cell.mitigation, floor=spec.floor)
    return topology, scenario


def _run_cell(args) -> ExperimentResult:
    spec, cell, rep = args
    seed = spec.seed_for(rep)
    try:
        topology, scenario = build_instance(spec, cell, seed)
        return run_experiment(topology, scenario, seed, cell.id, cell.params())
    except Exception as exc:  # one bad cell must not sink the sweep
        log.exception("cell %s rep %d failed", cell.id, rep)
        return ExperimentResult(cell.id, seed, params=cell.params(), error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[ExperimentResult]:
    work = [(spec, cell, rep) for cell in spec.cells() for rep in range(spec.repetitions)]
    if jobs <= 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, work, chunksize=4))


def parse_sweep(text: str, source: str = "<sweep>") -> SweepSpec:
    """Line format: ``seed``, ``repetitions``, ``tiers t1 t2 t3``, ``peering p2 p3``,
    ``hijacker_site ...``, ``legit_providers ...``, ``attack ...``,
    ``mitigation immediate|off|defer:<ms> ...``, ``prefix <CIDR>``,
    ``poll_interval <sec>``, ``floor <len>``."""
    kwargs: dict = {}
    tiers: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        try:
            if head == "seed" and len(args) == 1:
                kwargs["master_seed"] = int(args[0])
            elif head == "repetitions" and len(args) == 1:
                kwargs["repetitions"] = int(args[0])
            elif head == "tiers" and len(args) == 3:
                tiers.update(tier1=int(args[0]), tier2=int(args[1]), tier3=int(args[2]))
            elif head == "peering" and len(args) == 2:
                tiers.update(tier2_peering=float(args[0]), tier3_peering=float(args[1]))
            elif head == "hijacker_site" and args:
                kwargs["hijacker_sites"] = args
            elif head == "legit_providers" and args:
                kwargs["legit_providers"] = [int(a) for a in args]
            elif head == "attack" and args:
                kwargs["attacks"] = args
            elif head == "mitigation" and args:
                kwargs["mitigations"] = [MitigationPolicy.from_label(a) for a in args]
            elif head == "prefix" and len(args) == 1:
                kwargs["hijacked_prefix"] = parse_prefix(args[0])
            elif head == "poll_interval" and len(args) == 1:
                kwargs["poll_interval"] = float(args[0])
            elif head == "floor" and len(args) == 1:
                kwargs["floor"] = int(args[0])
            else:
                raise SweepError(f"unrecognized line {line!r}")
        except ValueError as exc:
            raise SweepError(f"{source}:{lineno}: {exc}") from None
    if tiers:
        kwargs["hierarchy"] = HierarchyParams(**tiers)
    try:
        return SweepSpec(**kwargs)
    except SweepError as exc:
        raise SweepError(f"{source}: {exc}") from None


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    return parse_sweep(path.read_text(), source=str(path))


def nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        raise ValueError("no values")
    ordered = sorted(values)
    if q <= 0:
        return ordered[0]
    rank = math.ceil(q * len(ordered))
    return ordered[min(rank, len(ordered)) - 1]


@dataclass(frozen=True)
class Summary:
    cell: str
    metric: str
    n: int
    undetected: int
    min: Optional[float] = None
    q1: Optional[float] = None
    median: Optional[float] = None
    q3: Optional[float] = None
    max: Optional[float] = None
    mean: Optional[float] = None


def five_number(cell: str, metric: str, values: Sequence[float], undetected: int) -> Summary:
    if not values:
        return Summary(cell, metric, 0, undetected)
    return Summary(cell, metric, len(values), undetected, nearest_rank(values, 0), nearest_rank(values, 0.25),
                   nearest_rank(values, 0.5), nearest_rank(values, 0.75), nearest_rank(values, 1.0),
                   sum(values) / len(values))


def summarize(results: Iterable[ExperimentResult]) -> list[Summary]:
    """Boxplot statistics per cell, for the overall delay and for each source."""
    by_cell: dict[str, list[ExperimentResult]] = {}
    for r in results:
        by_cell.setdefault(r.scenario_id, []).append(r)
    if not by_cell:
        raise ValueError("nothing to summarize")
    out = []
    for cell, rows in by_cell.items():
        ok = [r for r in rows if r.error is None]
        if not ok:
            raise ValueError(f"cell {cell} has no successful results")
        delays = [r.detection_delay for r in ok if r.detected]
        out.append(five_number(cell, "detection", delays, len(ok) - len(delays)))
        for sid in sorted({s for r in ok for s in r.sources}):
            values = [r.per_source_delay[sid] for r in ok if sid in r.per_source_delay]
            out.append(five_number(cell, f"detection:{sid}", values, len(ok) - len(values)))
        totals = [r.t_total for r in ok if r.t_total is not None]
        out.append(five_number(cell, "t_total", totals, len(ok) - len(totals)))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


RESULT_FIELDS = ["scenario", "attack", "hijacker_site", "legit_providers", "mitigation", "seed", "detected",
                 "alarm_kind", "detection_delay_ms"]
RESULT_TAIL = ["t_start_ms", "t_total_ms", "peak_infected", "final_infected", "escalated", "error"]


def emit_csv(results: Sequence[ExperimentResult], path) -> Path:
    """Raw results, plus the infected-fraction series in ``<path>.series.csv``."""
    path = Path(path)
    sources = sorted({s for r in results for s in r.sources})
    header = RESULT_FIELDS + [f"delay_{s}_ms" for s in sources] + RESULT_TAIL
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in results:
            p = r.params
            row = [r.scenario_id, p.get("attack"), p.get("hijacker_site"), p.get("legit_providers"),
                   p.get("mitigation"), r.seed, r.detected, r.alarm_kind, r.detection_delay]
            row += [r.per_source_delay.get(s) for s in sources]
            row += [r.t_start, r.t_total, r.peak_infected, r.final_infected, r.escalated, r.error]
            writer.writerow([_fmt(v) for v in row])
    series_path = Path(str(path) + ".series.csv")
    with series_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "seed", "time_ms", "fraction"])
        for r in results:
            for t, f in r.series:
                writer.writerow([r.scenario_id, r.seed, t, repr(f)])
    return path


def emit_summary_csv(summaries: Sequence[Summary], path) -> Path:
    path = Path(path)
    fields = ["cell", "metric", "n", "undetected", "min", "q1", "median", "q3", "max", "mean"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for s in summaries:
            writer.writerow([_fmt(getattr(s, f)) for f in fields])
    return path


def read_csv(path) -> list[dict]:
    """Rows with numeric cells converted back to int or float; blanks become None."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: _parse_cell(v) for k, v in row.items()})
    return rows


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text
