"""Acceptance checks, one per criterion; each prints a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import random
import statistics
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from salve.attacks import (  # noqa: E402
    CLIENT_ACCEPTED,
    CLIENT_REJECTED,
    EXPECTED_REASON,
    HIJACK_FAILED,
    HIJACK_SUCCEEDED,
    AttackKind,
    AttackScenario,
    run_attack,
)
from salve.bench import bench_one  # noqa: E402
from salve.client import ClientPolicy, verify_statement  # noqa: E402
from salve.crypto import sha256  # noqa: E402
from salve.dnssim import RRType, trust_anchor  # noqa: E402
from salve.geo import GeoLocation, decode_loc, encode_loc  # noqa: E402
from salve.gmlc import MlpRequest, statement_xml  # noqa: E402
from salve.minitls import KexMode  # noqa: E402
from salve.scenario import Keys, Topology, build_deployment, build_zone_tree  # noqa: E402
from salve.server import MerkleBatching  # noqa: E402

from support import fuzz_once, mutate_once, record_handshake  # noqa: E402

ZURICH = GeoLocation(47.3769, 8.5417)
KEX = (KexMode.DHE, KexMode.STATIC_RSA)


def within(value: float, target: float, tol: float) -> bool:
    return abs(value - target) <= tol * target


# -- criteria ---------------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    wrong = []
    for kex in KEX:
        for kind, reason in EXPECTED_REASON.items():
            out = run_attack(AttackScenario(kind, kex))
            if (out.outcome, out.reason) != (CLIENT_REJECTED, reason):
                wrong.append(f"{kind.value}/{kex.name}: {out.outcome} {out.reason}")
        honest = run_attack(AttackScenario(AttackKind.HONEST, kex))
        if honest.outcome != CLIENT_ACCEPTED:
            wrong.append(f"honest/{kex.name}: {honest.reason}")
    elapsed = time.perf_counter() - t0
    ok = not wrong and elapsed < 30
    return ok, f"{2 * (len(EXPECTED_REASON) + 1)} runs in {elapsed:.2f}s" + (f"; {wrong}" if wrong else "")


def criterion_2():
    rsa = run_attack(AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.STATIC_RSA))
    dhe = run_attack(AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.DHE))
    # rerun for determinism
    again = run_attack(AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.STATIC_RSA))
    ok = rsa.outcome == HIJACK_SUCCEEDED and dhe.outcome == HIJACK_FAILED and again == rsa
    return ok, f"static-rsa: {rsa.outcome}, dhe: {dhe.outcome}"


def criterion_3():
    dep = build_deployment()
    resp = dep.gmlc.service.handle(MlpRequest("server-operator", ("sim-server-0",), sha256(b"session")))
    size = len(statement_xml(resp.statement))
    return within(size, 490, 0.15), f"{size} bytes (490 +/- 15%)"


def criterion_4():
    keys = Keys.from_seed(0)
    root = build_zone_tree("example.com", "203.0.113.10", [ZURICH], keys)
    dep = build_deployment()
    extra = dep.resolver().ladns_lookup("example.com").ladns_extra_bytes
    (loc,) = root.find("example.com").rrset("example.com", RRType.LOC)
    golden = bytes.fromhex("001216138a2a7da881d535a800989680")
    ok = within(extra, 420, 0.15) and len(loc.rdata) == 16 and loc.rdata == golden
    assert trust_anchor(root) == dep.anchor
    return ok, f"extra {extra} bytes (420 +/- 15%), LOC rdata {len(loc.rdata)} bytes {loc.rdata.hex()}"


def criterion_5():
    dep = build_deployment()
    digest = sha256(b"session")
    stmt = dep.gmlc.service.handle(MlpRequest("server-operator", ("sim-server-0",), digest)).statement
    wire = stmt.to_bytes()
    legit, policy, now, pub = dep.topology.legitimate_locations, ClientPolicy(), dep.net.now, dep.keys.gmlc.public
    times = []
    for _ in range(10_000):
        t0 = time.perf_counter()
        verdict = verify_statement(wire, digest, legit, policy, now, pub)
        times.append(time.perf_counter() - t0)
        if not verdict.accepted:
            return False, f"verification failed: {verdict.reason}"
    median_us = statistics.median(times) * 1e6
    return median_us <= 1000, f"median {median_us:.0f} us over 10^4 (limit 1000 us)"


def criterion_6():
    details, ok = [], True
    for g in (5, 15, 50):
        topo = Topology.default().with_latency("server", "gmlc", g)
        plain = bench_one("plain", 1, topology=topo, handshakes=200)
        salve = bench_one("salve", 1, topology=topo, handshakes=200)
        delta = salve.p50_ms - plain.p50_ms
        good = within(delta, 2 * g, 0.20)
        ok &= good
        details.append(f"g={g}: delta {delta:.2f} ms ({delta / (2 * g):.3f} x 2g)")
    topo = Topology.default().with_latency("server", "gmlc", 0)
    plain = bench_one("plain", 300, topology=topo, handshakes=2000)
    salve = bench_one("salve", 300, topology=topo, handshakes=2000)
    reduction = 1 - salve.rps / plain.rps
    ok &= reduction <= 0.10 and salve.failures == 0
    details.append(f"throughput {plain.rps:.0f} -> {salve.rps:.0f} rps, reduction {reduction:.1%}")
    return ok, "; ".join(details)


def criterion_7():
    total = 448
    per_conn = bench_one("salve", 8, handshakes=total).gmlc_requests
    details, ok = [f"per-connection {per_conn}"], per_conn == total
    for n in (1, 2, 7, 32):
        dep = build_deployment(batching=MerkleBatching(window_ms=10_000, max_batch=n))
        done = []
        clients = [dep.client() for _ in range(n)]
        for round_ in range(total // n):
            attempts = [c.connect(dep.domain) for c in clients]
            dep.net.run(stop=lambda: all(a.done for a in attempts))
            done += [a.result for a in attempts]
        verified = sum(1 for r in done if r.accepted and r.salve_verified and r.verdict.accepted)
        sizes = {e.batch_size for e in dep.server.events}
        good = dep.server.gmlc_requests == total // n and verified == total and sizes == {n}
        ok &= good
        details.append(f"N={n}: {dep.server.gmlc_requests} requests, {verified}/{total} verified")
    return ok, "; ".join(details)


def criterion_8():
    rng = random.Random(8)
    worst_arcsec = worst_cm = 0.0
    for _ in range(10_000):
        g = GeoLocation(rng.uniform(-90, 90), rng.uniform(-180, 180), rng.uniform(-100_000, 40_000))
        back = decode_loc(encode_loc(g))
        worst_arcsec = max(
            worst_arcsec, abs(back.latitude - g.latitude) * 3600, abs(back.longitude - g.longitude) * 3600
        )
        worst_cm = max(worst_cm, abs(back.altitude - g.altitude) * 100)
    keys = Keys.from_seed(0)
    root = build_zone_tree("example.com", "203.0.113.10", [ZURICH], keys)
    anchor = trust_anchor(root)
    mrng = random.Random(88)
    trials = [mutate_once(root, anchor, "example.com", mrng, 1_700_000_000) for _ in range(10_000)]
    effective = [m for m in trials if m.effective]
    missed = [m for m in effective if not m.detected]
    ok = worst_arcsec <= 0.001 and worst_cm <= 1.0 and not missed and len(effective) >= 9_000
    return ok, (
        f"LOC worst {worst_arcsec:.5f} arcsec / {worst_cm:.3f} cm; "
        f"mutations {len(effective)} effective, {len(missed)} undetected"
    )


def criterion_9():
    dep = build_deployment()
    rng = random.Random(9)
    results = []
    for kex in KEX:
        canon = record_handshake(dep, kex, f"accept/{kex.name}/a")
        foreign = record_handshake(dep, kex, f"accept/{kex.name}/b")
        results += [fuzz_once(dep, canon, foreign, rng) for _ in range(5_000)]
    invalid = [r for r in results if not r.valid]
    aborted = sum(1 for r in results if r.phase.name == "ABORTED")
    return not invalid, f"{len(results)} perturbations, {aborted} aborted, {len(invalid)} invalid established"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


def report(n: int, ok: bool, detail: str) -> str:
    return f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("n", range(1, len(CRITERIA) + 1))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print("\n" + report(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail = fn()
        failed += not ok
        print(report(i, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
