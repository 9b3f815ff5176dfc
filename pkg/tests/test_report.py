import pytest

from conftest import make_scenario
from preof5g.netsim import FailureSpec
from preof5g.report import (
    REPORT_HEADER,
    ComparisonError,
    FlowReport,
    SimulationReport,
    compare,
    emit_report,
    format_comparison,
    parse_report,
    percentile,
)
from preof5g.scenario import run_scenario


def test_empty_report_is_header_only():
    text = emit_report(SimulationReport(name="empty"), "kv")
    assert all(line.startswith("#") for line in text.splitlines())
    assert text.startswith(REPORT_HEADER)
    assert parse_report(text) == {}
    assert "empty" in emit_report(SimulationReport(name="empty"), "table")


def test_percentile_nearest_rank():
    values = list(range(1, 101))
    assert percentile(values, 0.99) == 99
    assert percentile(values, 1.0) == 100
    assert percentile([7], 0.99) == 7
    assert percentile([], 0.99) == 0


def test_latency_summary_present_and_consistent():
    r = run_scenario(make_scenario(count=20, jitter=50, seed=9))
    m = r.flow("up1").metrics()
    for key in ("latency_min", "latency_mean", "latency_p99", "latency_max", "latency_sum", "latency_count"):
        assert key in m
    assert m["latency_min"] <= m["latency_mean"] <= m["latency_max"]
    assert m["latency_sum"] == sum(r.flow("up1").latencies)
    assert m["latency_count"] == m["delivered"] == 20


def test_kv_is_deterministic_and_round_trips():
    s = make_scenario(count=200, jitter=100, loss=0.2, seed=11, offload=True)
    a = emit_report(run_scenario(s), "kv")
    b = emit_report(run_scenario(s), "kv")
    assert a == b
    parsed = parse_report(a)
    assert parsed["flow.up1.sent"] == 200
    assert isinstance(parsed["flow.up1.latency_mean"], float)


def test_compare_antisymmetric():
    base = run_scenario(make_scenario(count=50))
    other = run_scenario(make_scenario(count=50, proxy=True, proxy_delay=25, dscp=46))
    ab, ba = compare(base, other), compare(other, base)
    assert ab.keys() == ba.keys()
    assert all(ab[k] == -ba[k] for k in ab)
    assert ab["flow.up1.latency_max"] == 25
    assert "latency_max" in format_comparison(ab)


def test_compare_rejects_different_flow_sets():
    a = run_scenario(make_scenario(count=5))
    b = run_scenario(make_scenario(count=5, direction="downlink"))
    with pytest.raises(ComparisonError):
        compare(a, b)


def test_audit_flags_broken_books():
    f = FlowReport(flow="up1", counters={"sent": 3, "replicas": 3, "delivered": 3})
    assert f.audit()
    f.counters["duplicates_eliminated"] = 3
    assert f.audit() == []
    f.delivered_ids = [1, 1]
    assert f.audit()


def test_conservation_across_drop_kinds():
    s = make_scenario(
        count=300, jitter=300, loss=0.3, seed=5, offload=True,
        failures=[FailureSpec("upf-a", at=100000, repair_at=150000)],
    )
    r = run_scenario(s)
    assert r.audit() == []
    c = r.flow("up1").counters
    assert c["loss_drops"] > 0 and c["node_drops"] > 0 and c["duplicates_eliminated"] > 0
