from __future__ import annotations

import math

import pytest

from salve.bench import CSV_FIELDS, MODES, BenchReport, _steady_rate, bench_one, calibrate, run_bench
from salve.netsim import CostModel
from salve.server import MerkleBatching


def test_bench_is_deterministic():
    a = bench_one("salve", 4, handshakes=40)
    b = bench_one("salve", 4, handshakes=40)
    assert a.latencies_ms == b.latencies_ms
    assert a == b


def test_row_counts_and_extra_bytes():
    plain = bench_one("plain", 2, handshakes=20)
    salve = bench_one("salve", 2, handshakes=20)
    assert plain.handshakes == salve.handshakes == 20 and plain.failures == salve.failures == 0
    assert plain.gmlc_requests == 0 and salve.gmlc_requests == 20
    assert plain.ladns_extra_bytes == 0 and salve.ladns_extra_bytes == 378
    assert salve.p50_ms > plain.p50_ms


def test_merkle_mode_reduces_requests():
    row = bench_one("salve-merkle", 8, handshakes=64, batch=MerkleBatching(window_ms=1000, max_batch=8))
    assert row.handshakes == 64 and row.gmlc_requests == 8


def test_duration_budget_stops_launching():
    row = bench_one("plain", 1, handshakes=10_000, duration=1.0)
    assert 0 < row.handshakes < 10_000


def test_salve_latency_adds_about_one_gmlc_round_trip():
    from salve.scenario import Topology

    topo = Topology.default().with_latency("server", "gmlc", 50)
    plain = bench_one("plain", 1, topology=topo, handshakes=20)
    salve = bench_one("salve", 1, topology=topo, handshakes=20)
    assert 100 <= salve.p50_ms - plain.p50_ms <= 120


def test_run_bench_csv(tmp_path):
    report = run_bench(("plain", "salve"), (1, 2), handshakes=10, gmlc_latency_ms=5)
    lines = report.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 5
    assert report.row("salve", 2).concurrency == 2
    with pytest.raises(KeyError):
        report.row("salve-merkle", 1)
    report.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text() == report.to_csv()
    assert BenchReport().to_csv().strip() == ",".join(CSV_FIELDS)


def test_bad_arguments():
    with pytest.raises(ValueError):
        bench_one("fast", 1, handshakes=1)
    with pytest.raises(ValueError):
        bench_one("plain", 0, handshakes=1)
    assert set(MODES) == {"plain", "salve", "salve-merkle"}


def test_steady_rate_window():
    assert _steady_rate([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]) == pytest.approx(1.0)
    assert math.isnan(_steady_rate([1.0]))
    assert math.isnan(_steady_rate([1.0, 1.0, 1.0]))


def test_calibrate_returns_positive_costs():
    costs = calibrate(rounds=5)
    assert isinstance(costs, CostModel)
    assert costs.server_hello > 0 and costs.client_verify > 0 and costs.gmlc_issue > 0
