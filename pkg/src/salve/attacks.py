"""Adversary scenarios against a simulated deployment.

Each scenario wires an adversary into a fresh deployment, lets the victim
client connect to the legitimate domain and classifies what happened. A
run is a *breach* when the victim accepts a session the adversary can read
or a statement not issued for its own session.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .client import ClientPolicy, ConnectAttempt, Reason
from .dnssim import RRType, ResourceRecord, normalize_name
from .errors import HandshakeError, ScenarioError
from .geo import encode_loc
from .gmlc import MlpRequest, MlpStatus, pack_forwarded
from .minitls import (
    ClientSession,
    KexMode,
    MsgType,
    ServerSession,
    message_type,
    open_client_record,
    recover_static_rsa_master,
)
from .netsim import Endpoint
from .scenario import ADVERSARY_CREDENTIAL, ADVERSARY_SIM, Deployment, Topology, build_deployment
from .server import GmlcChannel, MerkleBatching


class AttackKind(str, Enum):
    HONEST = "honest"
    RELAY_STATEMENT = "relay-statement"
    OWN_SIM_STATEMENT = "own-sim-statement"
    PASSIVE_RSA_HIJACK = "passive-rsa-hijack"
    DOWNGRADE_STRIP = "downgrade-strip"
    DNS_TAMPER = "dns-tamper"
    STALE_REPLAY = "stale-replay"
    MERKLE_CROSS_SESSION = "merkle-cross-session"


ATTACK_KINDS = tuple(k for k in AttackKind if k != AttackKind.HONEST)

CLIENT_ACCEPTED = "client-accepted"
CLIENT_REJECTED = "client-rejected"
HIJACK_SUCCEEDED = "hijack-succeeded"
HIJACK_FAILED = "hijack-failed"
SETUP_ERROR = "setup-error"

# victim-side reason each active scenario must end with
EXPECTED_REASON = {
    AttackKind.RELAY_STATEMENT: Reason.DIGEST_MISMATCH.value,
    AttackKind.OWN_SIM_STATEMENT: Reason.LOCATION_MISMATCH.value,
    AttackKind.DOWNGRADE_STRIP: Reason.DOWNGRADE.value,
    AttackKind.DNS_TAMPER: "validation-error",
    AttackKind.STALE_REPLAY: Reason.STALE.value,
    AttackKind.MERKLE_CROSS_SESSION: Reason.MERKLE_PROOF_INVALID.value,
}

# which kinds need which adversary asset
_NEEDS_SERVER_KEY = {AttackKind.PASSIVE_RSA_HIJACK}
_NEEDS_CERTIFIED_KEY = {
    AttackKind.RELAY_STATEMENT,
    AttackKind.OWN_SIM_STATEMENT,
    AttackKind.DOWNGRADE_STRIP,
    AttackKind.MERKLE_CROSS_SESSION,
}

APP_PLAINTEXT = b"GET /account HTTP/1.1\r\nHost: example.com\r\n\r\n"


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    kex: KexMode = KexMode.DHE
    stolen_server_key: bool = True
    certified_key: bool = True  # a CA-signed key for the victim domain
    own_sim: bool = True
    policy: ClientPolicy = ClientPolicy()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "kex", KexMode(self.kex))

    def expected_outcome(self) -> tuple:
        if self.kind == AttackKind.HONEST:
            return CLIENT_ACCEPTED, Reason.OK.value
        if self.kind == AttackKind.PASSIVE_RSA_HIJACK:
            return (HIJACK_SUCCEEDED if self.kex == KexMode.STATIC_RSA else HIJACK_FAILED), None
        return CLIENT_REJECTED, EXPECTED_REASON[self.kind]


@dataclass(frozen=True)
class AttackOutcome:
    kind: AttackKind
    kex: KexMode
    outcome: str
    reason: Optional[str] = None
    detail: str = ""

    @property
    def breach(self) -> bool:
        if self.outcome == HIJACK_SUCCEEDED:
            return True
        return self.outcome == CLIENT_ACCEPTED and self.kind != AttackKind.HONEST

    def matches(self, scenario: AttackScenario) -> bool:
        outcome, reason = scenario.expected_outcome()
        return self.outcome == outcome and (reason is None or self.reason == reason)

    def as_dict(self) -> dict:
        return {
            "scenario": self.kind.value,
            "kex": self.kex.name.lower(),
            "outcome": self.outcome,
            "reason": self.reason,
            "breach": self.breach,
        }


# -- adversary actors ---------------------------------------------------------------------


@dataclass
class _Victim:
    end: Endpoint
    session: ServerSession


class ActiveMitm:
    """Terminates the victim's handshake with a certified key and runs a second one upstream."""

    def __init__(self, dep: Deployment, kind: AttackKind, *, salve_enabled: bool = True):
        self.dep = dep
        self.kind = kind
        self.salve_enabled = salve_enabled
        self.address = dep.address("adversary")
        self.rng = random.Random(f"adversary/{dep.seed}")
        self.captured: Optional[bytes] = None  # plaintext forwarded-statement payload
        self.victims: list = []
        self.upstream_sessions = 0
        self._waiting: list = []
        dep.net.intercept(dep.address("client"), dep.address("server"), self._accept, via=self.address)

    # victim side

    def _accept(self, end: Endpoint) -> None:
        session = ServerSession(
            self.dep.keys.adversary,
            self.dep.adversary_certificate,
            kex=self.dep.kex,
            salve_enabled=self.salve_enabled,
            rng=self.rng,
        )
        victim = _Victim(end, session)
        self.victims.append(victim)
        end.on_data = lambda data: self._on_victim_data(victim, data)

    def _on_victim_data(self, victim: _Victim, data: bytes) -> None:
        for m in victim.session.receive(data):
            victim.end.send(m)
        if victim.session.needs_statement:
            self._obtain_statement(victim)

    def _deliver(self, victim: _Victim, payload: bytes) -> None:
        if victim.session.needs_statement:
            for m in victim.session.deliver_statement(payload):
                victim.end.send(m)

    def _obtain_statement(self, victim: _Victim) -> None:
        if self.kind == AttackKind.OWN_SIM_STATEMENT:
            self._request_own_sim(victim)
        elif self.captured is not None:
            self._deliver(victim, self.captured)
        else:
            self._waiting.append(victim)
            self.fetch_upstream()

    # upstream: an ordinary client session to the genuine server

    def fetch_upstream(self) -> None:
        dep = self.dep
        session = ClientSession(
            dep.domain,
            (dep.keys.ca.public,),
            kex=dep.kex,
            offer_salve=True,
            statement_handler=self._capture,
            rng=self.rng,
        )
        self.upstream_sessions += 1
        end = dep.net.connect(self.address, dep.address("server"))
        end.on_data = lambda data: [end.send(m) for m in session.receive(data)]
        for m in session.start():
            end.send(m)

    def _capture(self, payload: bytes, _session: ClientSession):
        self.captured = payload
        waiting, self._waiting = self._waiting, []
        for victim in waiting:
            self._deliver(victim, payload)
        return None

    # own SIM: ask the GMLC about the adversary's phone, bound to the victim session

    def _request_own_sim(self, victim: _Victim) -> None:
        channel = GmlcChannel(self.dep.net, self.address, self.dep.address("gmlc"))
        req = MlpRequest(ADVERSARY_CREDENTIAL, (ADVERSARY_SIM,), victim.session.session_digest)

        def on_response(resp, _rtt):
            if resp is not None and resp.status == MlpStatus.OK:
                self._deliver(victim, pack_forwarded(resp.statement))

        channel.request(req, on_response)


class PassiveRecorder:
    """Records client/server traffic on the tapped link without changing it."""

    def __init__(self, dep: Deployment):
        self.client = dep.address("client")
        self.server = dep.address("server")
        self.messages: list = []  # (sender, data)
        dep.net.add_tap(self.client, self.server, self._tap)

    def _tap(self, _conn, sender: str, data: bytes) -> list:
        self.messages.append((sender, data))
        return [(0.0, data)]

    def handshake(self) -> list:
        return [data for _, data in self.messages if message_type(data) is not None]

    def client_records(self) -> list:
        """Client-sent traffic after its Finished: the application records."""
        out, seen_finished = [], False
        for sender, data in self.messages:
            if sender != self.client:
                continue
            if seen_finished:
                out.append(data)
            elif message_type(data) == MsgType.FINISHED:
                seen_finished = True
        return out


class StatementDelay:
    """Holds the genuine LocationStatement back on the server-to-client path."""

    def __init__(self, dep: Deployment, delay_s: float):
        self.server = dep.address("server")
        self.delay = delay_s
        self.held = 0
        dep.net.add_tap(dep.address("client"), self.server, self._tap)

    def _tap(self, _conn, sender: str, data: bytes) -> list:
        if sender == self.server and message_type(data) == MsgType.LOCATION_STATEMENT:
            self.held += 1
            return [(self.delay, data)]
        return [(0.0, data)]


def loc_forgery(domain: str, location) -> callable:
    """Resolver interceptor swapping the domain's LOC rdata, signatures left as they are."""
    forged = encode_loc(location)

    def intercept(_apex, qname, rrtype, records):
        if qname != normalize_name(domain) or rrtype != RRType.LOC:
            return records
        return [
            ResourceRecord(r.name, r.rrtype, r.ttl, forged) if r.rrtype == RRType.LOC else r for r in records
        ]

    return intercept


# -- driver -------------------------------------------------------------------------------


def _check_setup(scenario: AttackScenario, topology: Topology) -> None:
    if scenario.kind == AttackKind.HONEST:
        return
    if not topology.has_tap("client", "server"):
        raise ScenarioError("topology has no adversary tap on the client-server link")
    if not topology.adversary_is_remote(scenario.policy.distance_threshold):
        raise ScenarioError("adversary location lies within the acceptance radius of a legitimate site")
    if scenario.kind in _NEEDS_SERVER_KEY and not scenario.stolen_server_key:
        raise ScenarioError(f"{scenario.kind.value} needs the server's private key")
    if scenario.kind in _NEEDS_CERTIFIED_KEY and not (scenario.certified_key or scenario.stolen_server_key):
        raise ScenarioError(f"{scenario.kind.value} needs a certified key for the victim domain")
    if scenario.kind == AttackKind.OWN_SIM_STATEMENT and not scenario.own_sim:
        raise ScenarioError("own-sim-statement needs the adversary's SIM and credential")


def _victim_outcome(scenario: AttackScenario, attempt: ConnectAttempt) -> AttackOutcome:
    result = attempt.result
    outcome = CLIENT_ACCEPTED if result.accepted else CLIENT_REJECTED
    return AttackOutcome(scenario.kind, scenario.kex, outcome, result.reason)


def run_attack(scenario: AttackScenario, topology: Optional[Topology] = None) -> AttackOutcome:
    """Run one scenario on a fresh deployment and classify the victim's fate."""
    topology = topology or Topology.default()
    try:
        _check_setup(scenario, topology)
    except ScenarioError as exc:
        return AttackOutcome(scenario.kind, scenario.kex, SETUP_ERROR, None, str(exc))

    kind = scenario.kind
    batching = MerkleBatching(window_ms=5.0, max_batch=8) if kind == AttackKind.MERKLE_CROSS_SESSION else None
    dep = build_deployment(topology, seed=scenario.seed, kex=scenario.kex, batching=batching)
    net = dep.net
    interceptor = None
    recorder = None

    if kind in (AttackKind.RELAY_STATEMENT, AttackKind.OWN_SIM_STATEMENT, AttackKind.DOWNGRADE_STRIP):
        ActiveMitm(dep, kind, salve_enabled=kind != AttackKind.DOWNGRADE_STRIP)
    elif kind == AttackKind.MERKLE_CROSS_SESSION:
        mitm = ActiveMitm(dep, kind)
        # batch A: the adversary's own session, completed before the victim shows up
        mitm.fetch_upstream()
        net.run(stop=lambda: mitm.captured is not None)
        if mitm.captured is None:
            return AttackOutcome(kind, scenario.kex, SETUP_ERROR, None, "no statement captured in batch A")
    elif kind == AttackKind.PASSIVE_RSA_HIJACK:
        recorder = PassiveRecorder(dep)
    elif kind == AttackKind.STALE_REPLAY:
        StatementDelay(dep, scenario.policy.freshness_threshold + 60.0)
    elif kind == AttackKind.DNS_TAMPER:
        interceptor = loc_forgery(dep.domain, topology.adversary_location)

    client = dep.client(scenario.policy, interceptor=interceptor)
    attempt = client.connect(dep.domain)
    net.run(stop=lambda: attempt.done)
    if not attempt.done:
        return AttackOutcome(kind, scenario.kex, CLIENT_REJECTED, "incomplete")

    if recorder is None:
        return _victim_outcome(scenario, attempt)
    return _passive_hijack(scenario, dep, attempt, recorder)


def _passive_hijack(scenario: AttackScenario, dep: Deployment, attempt: ConnectAttempt, recorder: PassiveRecorder):
    if not attempt.result.accepted:
        return AttackOutcome(scenario.kind, scenario.kex, HIJACK_FAILED, attempt.result.reason, "victim never connected")
    attempt.send_app(APP_PLAINTEXT)
    dep.net.run()
    master = recover_static_rsa_master(recorder.handshake(), dep.keys.server)
    records = recorder.client_records()
    if master is None or not records:
        return AttackOutcome(scenario.kind, scenario.kex, HIJACK_FAILED, None, "master secret not recoverable")
    try:
        plaintext = open_client_record(master, 0, records[0])
    except HandshakeError:
        return AttackOutcome(scenario.kind, scenario.kex, HIJACK_FAILED, None, "recovered key does not open traffic")
    if plaintext != APP_PLAINTEXT:
        return AttackOutcome(scenario.kind, scenario.kex, HIJACK_FAILED, None, "decryption produced other data")
    return AttackOutcome(scenario.kind, scenario.kex, HIJACK_SUCCEEDED, None, "application data decrypted")


@dataclass
class SweepResult:
    outcomes: list = field(default_factory=list)

    @property
    def breaches(self) -> list:
        return [o for o in self.outcomes if o.breach]

    @property
    def sound(self) -> bool:
        """No breach except the static-RSA hijack, the documented insecure configuration."""
        return all(o.kind == AttackKind.PASSIVE_RSA_HIJACK and o.kex == KexMode.STATIC_RSA for o in self.breaches)


def soundness_sweep(topology: Optional[Topology] = None, kex_modes=(KexMode.DHE, KexMode.STATIC_RSA)) -> SweepResult:
    sweep = SweepResult()
    for kex in kex_modes:
        for kind in AttackKind:
            sweep.outcomes.append(run_attack(AttackScenario(kind, kex), topology))
    return sweep
