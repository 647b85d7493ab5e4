import pytest

from hijackguard.feeds import EventKind
from hijackguard.harness import (HIJACKER_ASN, LEGITIMATE_ASN, Cell, ExperimentResult, Pipeline, SweepError,
                                 SweepSpec, build_instance, emit_csv, emit_summary_csv, five_number, nearest_rank,
                                 parse_sweep, read_csv, run_experiment, run_sweep, summarize)
from hijackguard.detector import OwnedPrefixTable
from hijackguard.simnet.engine import run
from hijackguard.simnet.scenario import MitigationPolicy, Scenario
from hijackguard.simnet.topology import HierarchyParams, parse_topology

from conftest import P

SMALL = HierarchyParams(tier1=4, tier2=30, tier3=120)


def instance(attack="subprefix", site="stub", providers=2, mitigation="immediate", seed=1, hierarchy=SMALL):
    spec = SweepSpec(hierarchy=hierarchy)
    return build_instance(spec, Cell(attack, site, providers, MitigationPolicy.from_label(mitigation)), seed)


def test_subprefix_end_to_end_default_topology():
    topo, scen = instance(hierarchy=HierarchyParams())
    table = OwnedPrefixTable([(scen.legitimate_prefix, scen.legitimate_origins)])
    pipeline = Pipeline(table, scen)
    trace = run(topo, scen, seed=1, consumer=pipeline)
    assert len(topo.nodes) == 500
    alarm = pipeline.alarms[0]
    assert alarm.kind.value == "subprefix" and alarm.announced_prefix == P("184.164.228.0/23")
    # both /24s were originated by the legitimate AS after the local router delay
    cmds = [c for c in trace.commands if c[4] == "command"]
    assert [(c[0], c[1], c[3]) for c in cmds] == [(alarm.first_seen + 50, LEGITIMATE_ASN, P("184.164.228.0/24")),
                                                  (alarm.first_seen + 50, LEGITIMATE_ASN, P("184.164.229.0/24"))]
    progress = pipeline.mitigator.progress[P("184.164.228.0/23")]
    assert progress.ever_infected and progress.recovered_fraction == 1.0
    # the hijacker stays quiet after the /24s go out, so no vantage falls back
    recovered = [snap[1] for snap in progress.snapshots]
    assert recovered == sorted(recovered)


def test_run_experiment_result_fields():
    topo, scen = instance()
    result = run_experiment(topo, scen, seed=1)
    assert result.alarm_kind == "subprefix" and result.detected
    assert result.detection_delay == min(result.per_source_delay.values())
    assert result.t_start == result.detection_delay + 50
    assert result.t_total is not None and result.t_total >= result.t_start
    times = [t for t, _ in result.series]
    assert times == sorted(set(times)) and all(0 <= f <= 1 for _, f in result.series)
    assert result.final_infected == 0.0 and 0.0 < result.peak_infected <= 1.0


def test_pipeline_first_seen_matches_trace():
    topo, scen = instance("exact")
    result = run_experiment(topo, scen, seed=3, keep_trace=True)
    trace = result.trace
    hijack = trace.markers["hijack_start"]
    bad = [e for e in trace.feed if e.kind is EventKind.ANNOUNCE and e.origin == HIJACKER_ASN]
    assert result.detection_delay == min(e.timestamp for e in bad) - hijack
    for sid, delay in result.per_source_delay.items():
        assert delay == min(e.timestamp for e in bad if e.source_id == sid) - hijack
    # push timestamps are the vantage's best-change time plus collector latency, never earlier
    changes = {}
    for t, asn, prefix, route in trace.best_changes:
        if route is not None and route.origin == HIJACKER_ASN:
            changes.setdefault(asn, t)
    for e in bad:
        if e.source_id != "lg-pool":
            assert e.timestamp >= changes[e.vantage_asn]


def test_deferred_mitigation_start():
    topo, scen = instance(mitigation="defer:1800000")
    result = run_experiment(topo, scen, seed=2)
    assert result.t_start == result.detection_delay + 1_800_000 + 50
    assert result.t_total > 1_800_000


def test_mitigation_off_keeps_infection():
    topo, scen = instance(mitigation="off")
    result = run_experiment(topo, scen, seed=2)
    assert result.t_start is None and result.t_total is None
    assert result.final_infected == result.peak_infected == 1.0


def test_undetected_is_reported():
    # the only vantage is the legitimate AS itself, which never leaves its own route
    topo = parse_topology("edge 1 2 p2c\nedge 1 3 p2c\nedge 1 5 p2c\nvantage 2 s\n")
    scen = Scenario(2, P("10.0.0.0/23"), (2,), 5, P("10.0.0.0/23"), mitigation=MitigationPolicy("immediate"))
    result = run_experiment(topo, scen, seed=0)
    assert not result.detected and result.detection_delay is None and result.alarm_kind is None
    summary = summarize([result])
    assert summary[0].metric == "detection" and summary[0].n == 0 and summary[0].undetected == 1


def test_sweep_cardinality_and_determinism():
    spec = SweepSpec(hijacker_sites=["stub"], repetitions=10, hierarchy=HierarchyParams(2, 10, 30))
    results = run_sweep(spec)
    assert len(results) == 40 and not any(r.error for r in results)
    assert results == run_sweep(spec)
    seeds = {r.scenario_id: [] for r in results}
    for r in results:
        seeds[r.scenario_id].append(r.seed)
    assert len({tuple(s) for s in seeds.values()}) == 1  # matched seeds across cells


def test_sweep_survives_failing_cell(monkeypatch):
    import hijackguard.harness as harness
    spec = SweepSpec(hijacker_sites=["stub"], attacks=["exact"], legit_providers=[1], repetitions=2,
                     hierarchy=HierarchyParams(2, 5, 10))
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise RuntimeError("boom")
        return real(*args, **kwargs)

    real = harness.run_experiment
    monkeypatch.setattr(harness, "run_experiment", flaky)
    results = run_sweep(spec)
    assert [r.error for r in results] == ["RuntimeError: boom", None]


def test_sweep_validation():
    with pytest.raises(SweepError):
        SweepSpec(repetitions=0)
    with pytest.raises(SweepError):
        SweepSpec(hijacker_sites=["moon"])
    with pytest.raises(SweepError):
        SweepSpec(attacks=[])
    with pytest.raises(SweepError):
        parse_sweep("repetitions ten\n")
    with pytest.raises(SweepError):
        parse_sweep("colour blue\n")


def test_parse_sweep():
    spec = parse_sweep("seed 5\nrepetitions 3\ntiers 2 10 40\npeering 0.1 0\nhijacker_site ixp\n"
                       "legit_providers 1\nattack exact\nmitigation immediate defer:60000 off\n"
                       "prefix 10.0.0.0/23\npoll_interval 30\nfloor 24\n")
    assert spec.master_seed == 5 and spec.repetitions == 3
    assert spec.hierarchy.tier2 == 10 and spec.hierarchy.tier2_peering == 0.1
    assert [c.id for c in spec.cells()] == ["exact/ixp/p1/immediate", "exact/ixp/p1/defer:60000", "exact/ixp/p1/off"]
    assert spec.hijacked_prefix == P("10.0.0.0/23") and spec.poll_interval == 30


def test_nearest_rank():
    values = [5, 3, 1, 4, 2]
    assert nearest_rank(values, 0.5) == 3
    assert nearest_rank(values, 0.25) == 2
    assert nearest_rank(values, 0.75) == 4
    assert (nearest_rank(values, 0), nearest_rank(values, 1)) == (1, 5)
    single = five_number("c", "m", [7], 0)
    assert single.min == single.q1 == single.median == single.q3 == single.max == single.mean == 7
    with pytest.raises(ValueError):
        nearest_rank([], 0.5)


def _results():
    return [
        ExperimentResult("a", 1, ("s", "t"), {"attack": "exact"}, {"s": 10, "t": 30}, 10, 60, 900,
                         [(0, 0.0), (5, 0.25), (900, 0.0)], "exact"),
        ExperimentResult("a", 2, ("s", "t"), {"attack": "exact"}, {"t": 40}, 40, 90, None, [(0, 0.0)], "exact"),
        ExperimentResult("b", 1, ("s", "t"), {"attack": "subprefix"}, error="ValueError: x"),
    ]


def test_emit_csv_roundtrip(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv(_results(), path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    rows = read_csv(path)
    assert rows[0]["delay_s_ms"] == 10 and rows[0]["t_total_ms"] == 900 and rows[0]["peak_infected"] == 0.25
    assert rows[1]["delay_s_ms"] is None and rows[1]["detection_delay_ms"] == 40
    assert rows[2]["error"] == "ValueError: x" and rows[2]["detected"] == 0
    series = read_csv(str(path) + ".series.csv")
    assert [(r["scenario"], r["seed"], r["time_ms"], r["fraction"]) for r in series] == [
        ("a", 1, 0, 0.0), ("a", 1, 5, 0.25), ("a", 1, 900, 0.0), ("a", 2, 0, 0.0)]


def test_summarize(tmp_path):
    rows = summarize(_results()[:2])
    by = {s.metric: s for s in rows}
    assert by["detection"].median == 10 and by["detection"].mean == 25.0
    assert by["detection:s"].n == 1 and by["detection:s"].undetected == 1
    assert by["t_total"].n == 1
    out = tmp_path / "summary.csv"
    emit_summary_csv(rows, out)
    assert read_csv(out)[0]["cell"] == "a"
    with pytest.raises(ValueError):
        summarize([])
    with pytest.raises(ValueError):
        summarize(_results()[2:])
