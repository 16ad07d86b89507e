"""Handshake benchmark on the simulated network.

Closed-loop clients hammer one server; each finished handshake is replaced
by a new one until the handshake budget (or virtual duration) is used up.
CPU work is charged from a :class:`~salve.netsim.CostModel`, so results are
a pure function of the arguments. :func:`calibrate` measures those costs
for the real implementation on the current machine.
"""

from __future__ import annotations

import csv
import io
import random
import statistics
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .client import ClientPolicy, RequireSalve, verify_statement
from .gmlc import MlpRequest, MlpResponse, pack_forwarded, unpack_forwarded
from .minitls import AlertCode, ClientSession, KexMode, ServerSession
from .netsim import CostModel
from .scenario import SERVER_CREDENTIAL, Topology, build_deployment, server_sim_ids
from .server import MerkleBatching

MODES = ("plain", "salve", "salve-merkle")
DEFAULT_HANDSHAKES = 2000
CSV_FIELDS = ("mode", "concurrency", "p50_ms", "p90_ms", "sigma_ms", "rps", "gmlc_requests", "ladns_extra_bytes")


@dataclass(frozen=True)
class BenchRow:
    mode: str
    concurrency: int
    p50_ms: float
    p90_ms: float
    sigma_ms: float
    rps: float
    gmlc_requests: int
    ladns_extra_bytes: int
    handshakes: int = 0
    failures: int = 0
    latencies_ms: tuple = field(default=(), repr=False, compare=False)


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)

    def row(self, mode: str, concurrency: int) -> BenchRow:
        for r in self.rows:
            if r.mode == mode and r.concurrency == concurrency:
                return r
        raise KeyError((mode, concurrency))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow(
                [r.mode, r.concurrency, f"{r.p50_ms:.3f}", f"{r.p90_ms:.3f}", f"{r.sigma_ms:.3f}",
                 f"{r.rps:.2f}", r.gmlc_requests, r.ladns_extra_bytes]
            )
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def _deployment_for(mode: str, topology: Topology, costs: CostModel, seed: int, batch: MerkleBatching, kex: KexMode):
    if mode not in MODES:
        raise ValueError(f"unknown bench mode {mode!r}")
    return build_deployment(
        topology,
        seed=seed,
        kex=kex,
        salve_enabled=mode != "plain",
        slvreq=mode != "plain",
        batching=batch if mode == "salve-merkle" else None,
        costs=costs,
    )


def bench_one(
    mode: str,
    concurrency: int,
    *,
    topology: Optional[Topology] = None,
    handshakes: int = DEFAULT_HANDSHAKES,
    duration: Optional[float] = None,
    costs: Optional[CostModel] = None,
    batch: MerkleBatching = MerkleBatching(),
    kex: KexMode = KexMode.DHE,
    seed: int = 0,
) -> BenchRow:
    """One closed-loop run; latency is the server's ClientHello-to-last-send time."""
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    topology = topology or Topology.default()
    costs = CostModel.desktop() if costs is None else costs
    dep = _deployment_for(mode, topology, costs, seed, batch, kex)
    net = dep.net
    policy = ClientPolicy(require_salve=RequireSalve.NEVER if mode == "plain" else RequireSalve.PER_DNS_FLAG)
    resolver = dep.resolver()
    start = net.now
    deadline = None if duration is None else start + duration
    state = {"started": 0, "ok": 0, "failed": 0, "extra": 0}
    done_at: list = []

    def launch(client):
        if state["started"] >= handshakes or (deadline is not None and net.now >= deadline):
            return
        state["started"] += 1
        client.connect(dep.domain, lambda result: finished(client, result))

    def finished(client, result):
        if result.accepted:
            state["ok"] += 1
            done_at.append(net.now)
            if result.records is not None:
                state["extra"] = result.records.ladns_extra_bytes
        else:
            state["failed"] += 1
        launch(client)

    clients = [dep.client(policy, resolver=resolver) for _ in range(concurrency)]
    for c in clients:
        launch(c)
    net.run(until=None if deadline is None else deadline + 60.0)

    lat = np.array([e.latency_ms for e in dep.server.events if e.outcome == "established"])
    rps = _steady_rate(done_at)
    return BenchRow(
        mode=mode,
        concurrency=concurrency,
        p50_ms=float(np.percentile(lat, 50)) if lat.size else float("nan"),
        p90_ms=float(np.percentile(lat, 90)) if lat.size else float("nan"),
        sigma_ms=float(lat.std(ddof=1)) if lat.size > 1 else 0.0,
        rps=rps,
        gmlc_requests=dep.server.gmlc_requests,
        ladns_extra_bytes=state["extra"],
        handshakes=state["ok"],
        failures=state["failed"],
        latencies_ms=tuple(lat.tolist()),
    )


def _steady_rate(done_at: list, lo: float = 0.1, hi: float = 0.9) -> float:
    """Completion rate between the ``lo`` and ``hi`` quantiles of completions.

    Cuts the ramp-up, where the server works on hellos before anything
    completes, and the drain at the end of the budget.
    """
    n = len(done_at)
    if n < 2:
        return float("nan")
    i, j = int(lo * (n - 1)), int(hi * (n - 1))
    if j <= i or done_at[j] <= done_at[i]:
        return float("nan")
    return (j - i) / (done_at[j] - done_at[i])


def run_bench(
    modes: Sequence[str] = MODES,
    concurrency: Sequence[int] = (1,),
    *,
    topology: Optional[Topology] = None,
    handshakes: int = DEFAULT_HANDSHAKES,
    duration: Optional[float] = None,
    gmlc_latency_ms: Optional[float] = None,
    costs: Optional[CostModel] = None,
    batch: MerkleBatching = MerkleBatching(),
    kex: KexMode = KexMode.DHE,
    seed: int = 0,
) -> BenchReport:
    """Every (mode, concurrency) pair on a fresh deployment."""
    topology = topology or Topology.default()
    if gmlc_latency_ms is not None:
        topology = topology.with_latency("server", "gmlc", gmlc_latency_ms)
    report = BenchReport()
    for mode in modes:
        for c in concurrency:
            report.rows.append(
                bench_one(
                    mode, c, topology=topology, handshakes=handshakes, duration=duration,
                    costs=costs, batch=batch, kex=kex, seed=seed,
                )
            )
    return report


# -- calibration ----------------------------------------------------------------------------


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return time.perf_counter() - t0, out


def calibrate(rounds: int = 200, seed: int = 0) -> CostModel:
    """Median wall time of each protocol step of this implementation, as a CostModel.

    Each role is timed on its own, as it would run on its own machine: a
    first pass runs complete seeded handshakes, timing the client and
    recording what the server and GMLC receive; the GMLC and then the
    server are replayed alone from those recordings.
    """
    dep = build_deployment(seed=seed)
    keys = dep.keys
    legit = dep.topology.legitimate_locations
    policy = ClientPolicy()
    sims = server_sim_ids(dep.topology)[:1]
    samples = {f.name: [] for f in fields(CostModel) if f.name != "gmlc_cores"}

    def check(payload, session):
        stmt, proof = unpack_forwarded(payload)
        verdict = verify_statement(stmt, session.session_digest, legit, policy, dep.net.now, keys.gmlc.public, proof)
        return None if verdict.accepted else AlertCode.BAD_LOCATION_STATEMENT

    def server_for(i):
        return ServerSession(keys.server, dep.certificate, rng=random.Random(f"calibrate/{seed}/{i}/server"))

    recorded = []
    for i in range(rounds):
        client = ClientSession(
            dep.domain, (keys.ca.public,), statement_handler=check, rng=random.Random(f"calibrate/{seed}/{i}/client")
        )
        server = server_for(i)
        (ch,) = client.start()
        sh, cert, sks = server.receive(ch)
        client.receive(sh)
        client.receive(cert)
        dt, (cks, fin) = _timed(client.receive, sks)
        samples["client_key_exchange"].append(dt)
        server.receive(cks)
        (sfin,) = server.receive(fin)
        client.receive(sfin)
        req_xml = MlpRequest(SERVER_CREDENTIAL, sims, server.session_digest).to_xml()
        resp_xml = dep.gmlc.service.handle_xml(req_xml)
        (ls,) = server.deliver_statement(pack_forwarded(MlpResponse.from_xml(resp_xml, decode=False).statement))
        dt, _ = _timed(client.receive, ls)
        if not client.established:
            raise RuntimeError("calibration handshake failed")
        samples["client_verify"].append(dt)
        recorded.append((ch, cks, fin, req_xml, resp_xml))

    for *_, req_xml, _resp in recorded:
        dt, _ = _timed(dep.gmlc.service.handle_xml, req_xml)
        samples["gmlc_issue"].append(dt)

    for i, (ch, cks, fin, _req, resp_xml) in enumerate(recorded):
        server = server_for(i)
        for name, msg in (("server_hello", ch), ("server_key_exchange", cks), ("server_finished", fin)):
            dt, _ = _timed(server.receive, msg)
            samples[name].append(dt)
        t0 = time.perf_counter()
        MlpRequest(SERVER_CREDENTIAL, sims, server.session_digest).to_xml()
        stmt = MlpResponse.from_xml(resp_xml, decode=False).statement
        if stmt.session_digest != server.session_digest:
            raise RuntimeError("replayed server diverged from the recording")
        server.deliver_statement(pack_forwarded(stmt))
        samples["server_statement"].append(time.perf_counter() - t0)

    return CostModel(**{name: statistics.median(v) for name, v in samples.items()})
