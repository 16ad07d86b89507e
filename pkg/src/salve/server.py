"""Web-server side of laTLS: GMLC channel, statement forwarding, Merkle batching.

The server actor lives on a :class:`~salve.netsim.SimNetwork`. Each client
connection runs a :class:`~salve.minitls.ServerSession`; once the client's
Finished verifies, the server asks the GMLC for a statement over one
persistent MLP channel and forwards it. In Merkle mode the digests of
several sessions are aggregated into one request and every client gets the
shared statement plus its own inclusion proof.
"""

from __future__ import annotations

import csv
import io
import itertools
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import ConfigError, as_bool, as_list, one, parse_kv
from .crypto import SigningIdentity
from .errors import CodecError
from .gmlc import GmlcService, LocationStatement, MlpRequest, MlpResponse, MlpStatus, pack_forwarded
from .merkle import MerkleProof, merkle_build, merkle_prove
from .minitls import AlertCode, Certificate, KexMode, MsgType, Phase, ServerSession, message_type
from .netsim import ConnectionRefused, CostModel, Cpu, Endpoint, SimNetwork

PER_CONNECTION = "per-connection"
MERKLE = "merkle"


@dataclass(frozen=True)
class MerkleBatching:
    window_ms: float = 10.0
    max_batch: int = 32

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.window_ms < 0:
            raise ValueError("window_ms must be >= 0")


@dataclass(frozen=True)
class ServerConfig:
    domain: str
    sim_ids: tuple
    gmlc_credential: str
    gmlc_address: str
    batching: Optional[MerkleBatching] = None  # None: one request per connection
    multi_sim: bool = False
    salve_enabled: bool = True
    kex: KexMode = KexMode.DHE

    def __post_init__(self):
        object.__setattr__(self, "sim_ids", tuple(self.sim_ids))
        if self.salve_enabled and not self.sim_ids:
            raise ValueError("sim_ids must be non-empty when SALVE is enabled")

    @property
    def mode(self) -> str:
        return PER_CONNECTION if self.batching is None else MERKLE

    @property
    def requested_sims(self) -> tuple:
        return self.sim_ids if self.multi_sim else self.sim_ids[:1]


def parse_server_config(text: str) -> tuple:
    """Parse a server config file; returns (ServerConfig, remaining raw keys)."""
    cfg = parse_kv(text)
    batching = one(cfg, "batching", PER_CONNECTION)
    if batching == PER_CONNECTION:
        batch = None
    elif batching == MERKLE:
        batch = MerkleBatching(float(one(cfg, "window-ms", "10")), int(one(cfg, "max-batch", "32")))
    else:
        raise ConfigError(f"unknown batching mode {batching!r}")
    kex = one(cfg, "kex", "dhe").lower().replace("-", "_")
    try:
        kex_mode = KexMode[kex.upper()]
    except KeyError:
        raise ConfigError(f"unknown key exchange {kex!r}") from None
    config = ServerConfig(
        domain=one(cfg, "domain"),
        sim_ids=tuple(as_list(one(cfg, "sim-ids", ""))),
        gmlc_credential=one(cfg, "credential", ""),
        gmlc_address=one(cfg, "gmlc", "gmlc"),
        batching=batch,
        multi_sim=as_bool(one(cfg, "multi-sim", "false")),
        salve_enabled=as_bool(one(cfg, "salve", "true")),
        kex=kex_mode,
    )
    return config, cfg


def load_server_config(path) -> tuple:
    return parse_server_config(Path(path).read_text())


# -- GMLC side of the network ----------------------------------------------------------


class GmlcEndpoint:
    """Serves MLP over the simulated network, charging ``gmlc_issue`` per request."""

    def __init__(self, net: SimNetwork, address: str, service: GmlcService, costs: CostModel = CostModel()):
        self.net = net
        self.address = address
        self.service = service
        self.costs = costs
        self.cpu = Cpu(net, costs.gmlc_cores)
        self.connections = 0
        self.up = True
        self._ends: list = []
        net.register(address, self._accept)

    def _accept(self, end: Endpoint) -> None:
        self.connections += 1
        self._ends.append(end)
        end.on_data = lambda data: self.cpu.submit(self.costs.gmlc_issue, self._respond, end, data)

    def _respond(self, end: Endpoint, data: bytes) -> None:
        if self.up:
            end.send(self.service.handle_xml(data))

    def shutdown(self) -> None:
        """Stop answering and drop every open channel."""
        self.up = False
        self.net.unregister(self.address)
        for end in self._ends:
            end.close()
        self._ends.clear()

    @property
    def requests_served(self) -> int:
        return self.service.requests_served


ResponseCallback = Callable[[Optional[MlpResponse], float], None]


class GmlcChannel:
    """One persistent MLP connection shared by every handshake of a server.

    Requests are pipelined and matched to responses by request id. If the
    GMLC cannot be reached or the channel drops, pending callbacks receive
    ``None`` so that the handshakes fail closed.
    """

    def __init__(self, net: SimNetwork, src: str, dst: str):
        self.net = net
        self.src = src
        self.dst = dst
        self.opens = 0
        self.requests = 0
        self._end: Optional[Endpoint] = None
        self._pending: dict = {}
        self._ids = itertools.count(1)

    def _open(self) -> bool:
        if self._end is not None and not self._end.conn.closed:
            return True
        try:
            end = self.net.connect(self.src, self.dst)
        except ConnectionRefused:
            return False
        end.on_data = self._on_data
        end.on_close = self._on_close
        self._end = end
        self.opens += 1
        return True

    def request(self, req: MlpRequest, callback: ResponseCallback) -> None:
        if not self._open():
            self.net.schedule(0.0, callback, None, 0.0)
            return
        rid = next(self._ids)
        self._pending[rid] = (callback, self.net.now)
        self.requests += 1
        self._end.send(replace(req, request_id=rid).to_xml())

    def _on_data(self, data: bytes) -> None:
        try:
            resp = MlpResponse.from_xml(data, decode=False)
        except CodecError:
            return
        entry = self._pending.pop(resp.request_id, None)
        if entry is not None:
            callback, sent = entry
            callback(resp, self.net.now - sent)

    def _on_close(self) -> None:
        self._end = None
        pending, self._pending = self._pending, {}
        for callback, sent in pending.values():
            callback(None, self.net.now - sent)


# -- server actor -------------------------------------------------------------------------


@dataclass
class HandshakeEvent:
    conn_id: int
    outcome: str
    latency_ms: float
    gmlc_rtt_ms: float = float("nan")
    batch_size: int = 0


EVENT_FIELDS = ("conn_id", "outcome", "latency_ms", "gmlc_rtt_ms", "batch_size")


def events_to_csv(events: Sequence[HandshakeEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_FIELDS)
    for e in events:
        w.writerow([e.conn_id, e.outcome, f"{e.latency_ms:.3f}", f"{e.gmlc_rtt_ms:.3f}", e.batch_size])
    return buf.getvalue()


@dataclass
class _Conn:
    end: Endpoint
    session: ServerSession
    hello_at: Optional[float] = None
    done: bool = False


@dataclass
class _Batch:
    members: list = field(default_factory=list)
    generation: int = 0


class SalveServer:
    """laTLS server actor bound to ``address`` on a simulated network."""

    def __init__(
        self,
        net: SimNetwork,
        address: str,
        config: ServerConfig,
        identity: SigningIdentity,
        certificate: Certificate,
        *,
        costs: CostModel = CostModel(),
        cores: int = 1,
        rng: Optional[random.Random] = None,
    ):
        self.net = net
        self.address = address
        self.config = config
        self.identity = identity
        self.certificate = certificate
        self.costs = costs
        self.rng = rng
        self.cpu = Cpu(net, cores)
        self.channel = GmlcChannel(net, address, config.gmlc_address)
        self.events: list = []
        self.batches = 0
        self._batch = _Batch()
        self._conn_ids = itertools.count(1)
        net.register(address, self._accept)

    # bookkeeping

    @property
    def gmlc_requests(self) -> int:
        return self.channel.requests

    @property
    def completed(self) -> int:
        return sum(1 for e in self.events if e.outcome == "established")

    def _record(self, conn: _Conn, outcome: str, rtt: float = float("nan"), batch_size: int = 0) -> None:
        if conn.done:
            return
        conn.done = True
        start = conn.hello_at if conn.hello_at is not None else self.net.now
        self.events.append(
            HandshakeEvent(conn.end.conn.id, outcome, (self.net.now - start) * 1000, rtt * 1000, batch_size)
        )

    def _send(self, conn: _Conn, messages: list) -> None:
        for m in messages:
            conn.end.send(m)

    # connection handling

    def _accept(self, end: Endpoint) -> None:
        session = ServerSession(
            self.identity,
            self.certificate,
            kex=self.config.kex,
            salve_enabled=self.config.salve_enabled,
            rng=self.rng,
        )
        conn = _Conn(end, session)
        end.on_data = lambda data: self._on_data(conn, data)
        end.on_close = lambda: self._on_close(conn)

    def _cost(self, data: bytes) -> float:
        kind = message_type(data)
        if kind == MsgType.CLIENT_HELLO:
            return self.costs.server_hello
        if kind == MsgType.CLIENT_KEY_SHARE:
            return self.costs.server_key_exchange
        if kind == MsgType.FINISHED:
            return self.costs.server_finished
        return 0.0

    def _on_data(self, conn: _Conn, data: bytes) -> None:
        if conn.hello_at is None and message_type(data) == MsgType.CLIENT_HELLO:
            conn.hello_at = self.net.now
        self.cpu.submit(self._cost(data), self._process, conn, data)

    def _process(self, conn: _Conn, data: bytes) -> None:
        session = conn.session
        self._send(conn, session.receive(data))
        if session.phase == Phase.ABORTED:
            self._record(conn, _abort_label(session))
            conn.end.close()
        elif session.needs_statement:
            self._request_statement(conn)
        elif session.established:
            self._record(conn, "established")

    def _on_close(self, conn: _Conn) -> None:
        conn.session.close()
        if not conn.done:
            self._record(conn, "closed")

    # statements

    def _request_statement(self, conn: _Conn) -> None:
        if self.config.batching is None:
            digest = conn.session.session_digest
            req = MlpRequest(self.config.gmlc_credential, self.config.requested_sims, digest)
            self.channel.request(req, lambda resp, rtt: self._on_statement(conn, digest, resp, rtt))
            return
        batch = self._batch
        batch.members.append(conn)
        if len(batch.members) >= self.config.batching.max_batch:
            self._flush(batch.generation)
        elif len(batch.members) == 1:
            self.net.schedule(self.config.batching.window_ms / 1000, self._flush, batch.generation)

    def _flush(self, generation: int) -> None:
        batch = self._batch
        if batch.generation != generation or not batch.members:
            return
        self._batch = _Batch(generation=generation + 1)
        members = batch.members
        self.batches += 1

        def deliver(digests, stmt, proofs, rtt):
            for conn, proof in zip(members, proofs):
                self._forward(conn, stmt, proof, rtt, len(members))

        def failed(rtt):
            for conn in members:
                self._fail(conn, rtt)

        merkle_batch(
            [c.session.session_digest for c in members],
            self.config,
            self.channel.request,
            deliver,
            failed,
        )

    def _on_statement(self, conn: _Conn, digest: bytes, resp: Optional[MlpResponse], rtt: float) -> None:
        stmt = _usable_statement(resp, digest)
        if stmt is None:
            self._fail(conn, rtt)
        else:
            self._forward(conn, stmt, None, rtt, 1)

    def _forward(self, conn: _Conn, stmt, proof: Optional[MerkleProof], rtt: float, n: int) -> None:
        self.cpu.submit(self.costs.server_statement, self._deliver, conn, stmt, proof, rtt, n)

    def _deliver(self, conn: _Conn, stmt, proof, rtt: float, n: int) -> None:
        if not conn.session.needs_statement:
            return
        self._send(conn, conn.session.deliver_statement(pack_forwarded(stmt, proof)))
        self._record(conn, "established", rtt, n)

    def _fail(self, conn: _Conn, rtt: float) -> None:
        self._send(conn, conn.session.fail(AlertCode.BAD_LOCATION_STATEMENT))
        self._record(conn, "gmlc-failure", rtt)
        conn.end.close()

    def write_event_log(self, path) -> None:
        Path(path).write_text(events_to_csv(self.events))


def _abort_label(session: ServerSession) -> str:
    if session.peer_alert is not None:
        return "peer-" + session.peer_alert.label
    if session.alert is not None:
        return session.alert.label
    return "aborted"


def _usable_statement(resp: Optional[MlpResponse], digest: bytes):
    """The response's statement if it is OK and echoes ``digest``, else None."""
    if resp is None or resp.status != MlpStatus.OK or resp.statement is None:
        return None
    if resp.statement.session_digest != digest:
        return None
    return resp.statement


def merkle_batch(
    digests: Sequence[bytes],
    config: ServerConfig,
    request: Callable[[MlpRequest, ResponseCallback], None],
    deliver: Callable[[list, LocationStatement, list, float], None],
    failed: Callable[[float], None],
) -> None:
    """Request one statement over the Merkle root of ``digests``.

    Exactly one MLP request is issued. On success ``deliver`` receives the
    digests, the shared statement and one proof per digest, in input order.
    """
    if not digests:
        raise ValueError("empty batch")
    if config.batching is not None and len(digests) > config.batching.max_batch:
        raise ValueError("batch exceeds max_batch")
    tree = merkle_build(list(digests))
    req = MlpRequest(config.gmlc_credential, config.requested_sims, tree.root)

    def on_response(resp: Optional[MlpResponse], rtt: float) -> None:
        stmt = _usable_statement(resp, tree.root)
        if stmt is None:
            failed(rtt)
            return
        deliver(list(digests), stmt, [merkle_prove(tree, i) for i in range(len(digests))], rtt)

    request(req, on_response)


def merkle_batch_sync(digests: Sequence[bytes], config: ServerConfig, gmlc: GmlcService) -> tuple:
    """Blocking form of :func:`merkle_batch` against a local GMLC service.

    Returns ``(statement, proofs)`` or raises :class:`RuntimeError` when the
    GMLC refuses.
    """
    result: dict = {}
    merkle_batch(
        digests,
        config,
        lambda req, cb: cb(gmlc.handle(req), 0.0),
        lambda _d, stmt, proofs, _rtt: result.update(stmt=stmt, proofs=proofs),
        lambda _rtt: result.update(error=True),
    )
    if "error" in result:
        raise RuntimeError("GMLC refused the batched request")
    return result["stmt"], result["proofs"]
