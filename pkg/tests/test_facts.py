import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cghf.bus import Bus, Envelope
from cghf.facts import (
    DivisionByZero,
    Fact,
    FactGenerator,
    InsufficientSamples,
    Sample,
    Storage,
    TimestampRegression,
    UnknownStream,
    aggregate,
    query_history,
    run_fact_pipeline,
)
from cghf.node import CGHF
from cghf.rules import parse, shipped_model
from oracles import exact_mean, exact_slope, rel_close

DENSITY = """
factdef ap1_density {
  stream "raw/ap/AP1/density"
  aggregate mean window 60s
  ttl 3min
  reemit 30s
  when value > 0.9 emit fact("AP1", "density_above_90", true)
}
"""


def storage_with(stream, points, retention=10**9):
    st_ = Storage(retention)
    for t, v in points:
        st_.ingest(Sample(stream, t, v))
    return st_


# -- storage ------------------------------------------------------------------


def test_ingest_then_query():
    s = storage_with("s1", [(100, 5.0)])
    assert [x.value for x in s.query("s1", 0, 200)] == [5.0]


def test_timestamp_regression():
    s = storage_with("s1", [(100, 5.0)])
    with pytest.raises(TimestampRegression):
        s.ingest(Sample("s1", 99, 1.0))
    s.ingest(Sample("s1", 100, 2.0))  # equal timestamps are allowed


def test_retention_boundary():
    s = storage_with("s", [(0, 1.0), (70_000, 2.0)], retention=60_000)
    assert [x.timestamp for x in s.query("s", 0, 70_001)] == [70_000]
    s = storage_with("s", [(10_000, 1.0), (70_000, 2.0)], retention=60_000)
    assert len(s.query("s", 0, 70_001)) == 2  # exactly retention old is kept


def test_query_half_open_and_errors():
    s = storage_with("s", [(1, 1.0), (2, 2.0), (3, 3.0)])
    assert [x.timestamp for x in query_history(s, "s", 1, 3)] == [1, 2]
    assert s.query("s", 5, 5) == []
    with pytest.raises(UnknownStream):
        s.query("nope", 0, 1)
    with pytest.raises(ValueError):
        s.query("s", 3, 1)


@settings(max_examples=200)
@given(
    st.lists(st.tuples(st.integers(0, 1000), st.floats(-1e6, 1e6)), min_size=1, max_size=60),
    st.integers(0, 1100),
    st.integers(0, 1100),
)
def test_query_matches_filter_oracle(points, a, b):
    start, end = min(a, b), max(a, b)
    points = sorted(points, key=lambda p: p[0])
    s = storage_with("s", points)
    want = [p for p in points if start <= p[0] < end]
    assert [(x.timestamp, x.value) for x in s.query("s", start, end)] == want


# -- aggregates -----------------------------------------------------------------


def test_mean_of_constant():
    s = storage_with("c", [(t, 5.0) for t in range(0, 50_000, 1000)])
    assert aggregate(s, "c", "mean", 30_000, 50_000) == 5.0


def test_jitter_increase_twenty_percent():
    s = storage_with("raw/gw/Z/jitter", [(m * 60_000, 10.0 if m < 15 else 12.0) for m in range(30)])
    assert aggregate(s, "raw/gw/Z/jitter", "rate_of_change", 1_800_000, 1_800_000) == pytest.approx(0.2, abs=1e-12)


def test_slope_and_forecast_closed_form():
    s = storage_with("s", [(0, 0.0), (10, 10.0), (20, 20.0)])
    assert aggregate(s, "s", "trend_slope", 21, 21) == pytest.approx(1.0)
    assert aggregate(s, "s", "forecast", 21, 21, horizon_ms=10) == pytest.approx(30.0)


def test_window_excludes_now_and_older_samples():
    s = storage_with("s", [(0, 100.0), (10, 1.0), (20, 3.0), (30, 100.0)])
    assert aggregate(s, "s", "mean", 20, 30) == 2.0


def test_aggregate_errors():
    s = storage_with("s", [(0, 0.0), (60, 1.0)])
    with pytest.raises(InsufficientSamples):
        aggregate(s, "s", "mean", 10, 200)
    with pytest.raises(DivisionByZero):
        aggregate(s, "s", "rate_of_change", 120, 120)
    one = storage_with("one", [(5, 1.0), (5, 2.0)])
    with pytest.raises(InsufficientSamples):
        aggregate(one, "one", "trend_slope", 100, 100)
    with pytest.raises(InsufficientSamples):
        aggregate(one, "one", "rate_of_change", 100, 100)  # second half is empty
    with pytest.raises(ValueError):
        aggregate(s, "s", "median", 100, 100)


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.floats(-1e9, 1e9)), min_size=2, max_size=80))
def test_mean_and_slope_match_exact_arithmetic(points):
    points = sorted(points, key=lambda p: p[0])
    times = [t for t, _ in points]
    values = [v for _, v in points]
    s = storage_with("s", points)
    now = times[-1] + 1
    window = now - times[0]
    assert rel_close(aggregate(s, "s", "mean", window, now), exact_mean(values))
    if times[0] != times[-1]:
        assert rel_close(aggregate(s, "s", "trend_slope", window, now), exact_slope(times, values))


@given(st.floats(1e-9, 1e12), st.integers(2, 100))
def test_rate_of_change_of_constant_is_zero(c, n):
    s = storage_with("c", [(t * 997, c) for t in range(n)])
    now = n * 997
    assert aggregate(s, "c", "rate_of_change", now, now) == 0.0


# -- pipeline -------------------------------------------------------------------


def density_pipeline(values, now=60_000):
    defs = parse(DENSITY).factdefs
    s = storage_with("raw/ap/AP1/density", [(i * 1000, v) for i, v in enumerate(values)])
    diags = []
    return run_fact_pipeline(defs, s, now, {}, diagnostics=diags), diags


def test_density_above_threshold_emits_fact():
    facts, _ = density_pipeline([0.95] * 60)
    assert len(facts) == 1
    f = facts[0]
    assert (f.subject, f.attribute, f.value, f.asserted_at, f.ttl) == ("AP1", "density_above_90", True, 60_000, 180_000)
    assert f.provenance == (("stream", "raw/ap/AP1/density", 0, 60_000),)


def test_density_below_threshold_emits_nothing():
    facts, diags = density_pipeline([0.5] * 60)
    assert facts == [] and diags == []


def test_no_samples_is_a_diagnostic_not_an_error():
    defs = parse(DENSITY).factdefs
    s = Storage()
    s.ingest(Sample("raw/ap/AP1/density", 0, 0.95))
    diags = []
    assert run_fact_pipeline(defs, s, 500_000, {}, diagnostics=diags) == []
    assert "InsufficientSamples" in diags[0].reason


def test_reemit_suppression():
    gen = FactGenerator()
    gen.install(parse(DENSITY).factdefs)
    for t in range(0, 120_000, 1000):
        gen.ingest(Sample("raw/ap/AP1/density", t, 0.95))
    assert len(gen.run(60_000)) == 1
    assert gen.run(70_000) == []
    assert len(gen.run(90_000)) == 1  # interval elapsed


def test_first_matching_classifier_wins():
    text = """
factdef tiers {
  stream "raw/cell/C1/utilization"
  aggregate mean window 10s
  ttl 1min
  when value > 0.9 emit fact("C1", "load_tier", "high")
  when value > 0.5 emit fact("C1", "load_tier", "medium")
  otherwise emit fact("C1", "load_tier", "low")
}
"""
    defs = parse(text).factdefs
    for v, want in ((0.95, "high"), (0.7, "medium"), (0.1, "low")):
        s = storage_with("raw/cell/C1/utilization", [(0, v)])
        assert run_fact_pipeline(defs, s, 5000, {})[0].value == want


def test_pipeline_never_writes_protected_attribute():
    text = DENSITY.replace("density_above_90", "anchor")
    defs = parse(text).factdefs
    s = storage_with("raw/ap/AP1/density", [(0, 0.95)])
    diags = []
    assert run_fact_pipeline(defs, s, 1000, {}, diagnostics=diags, protected=frozenset({"anchor"})) == []
    assert "static" in diags[0].reason


def test_node_protects_static_attributes_and_publishes_facts():
    bus = Bus("n", clock=lambda: 0)
    node = CGHF("cghf", shipped_model(), bus)
    node.assert_static("UE1", "anchor", "GW1", 0)
    facts_sub = bus.subscribe("facts/#", "t")
    node.load(parse(DENSITY))
    for t in range(0, 61_000, 1000):
        bus.publish(Envelope("raw/ap/AP1/density", "nf", t, t // 1000 + 1, {"value": 0.95}))
    res = node.step(61_000)
    assert [f.attribute for f in res.facts] == ["density_above_90"]
    assert [e.topic for e in bus.poll(facts_sub, now=61_000)] == ["facts/AP1/density_above_90"]
    assert node.kb.get("UE1", "anchor").value == "GW1"


def test_fact_rejects_nonpositive_ttl_and_round_trips():
    with pytest.raises(ValueError):
        Fact("f", "s", "a", 1, 0, 0)
    f = Fact("f", "s", "a", 1.5, 10, 100, (("stream", "raw/x", 0, 10), ("rule", "r")))
    assert Fact.from_json(f.to_json()) == f
    assert not f.expired(110) and f.expired(111)
