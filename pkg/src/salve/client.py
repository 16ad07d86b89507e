"""Client side of SALVE: laDNS, the laTLS client and statement verification."""

from __future__ import annotations

import hmac
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .config import ConfigError, one, parse_kv
from .dnssim import Resolver, ValidatedRecordSet
from .errors import CodecError, DnsError, KeyFormatError, NXDomain, TrustError, ValidationError
from .geo import GeoLocation, great_circle_distance
from .gmlc import LocationStatement, unpack_forwarded
from .merkle import MerkleProof, merkle_verify
from .minitls import AlertCode, ClientSession, KexMode, MsgType, Phase, message_type
from .netsim import ConnectionRefused, CostModel, Cpu, Endpoint, SimNetwork

DEFAULT_FRESHNESS_S = 300.0
DEFAULT_DISTANCE_M = 250.0


class RequireSalve(str, Enum):
    ALWAYS = "always"
    PER_DNS_FLAG = "per-dns-flag"
    NEVER = "never"


class MatchMode(str, Enum):
    ANY_OF_L = "any-of-L"
    ALL_OF_L = "all-of-L"


@dataclass(frozen=True)
class ClientPolicy:
    """Acceptance policy. ``distance_threshold=0`` demands an exact match at LOC resolution."""

    freshness_threshold: float = DEFAULT_FRESHNESS_S
    distance_threshold: float = DEFAULT_DISTANCE_M
    require_salve: RequireSalve = RequireSalve.PER_DNS_FLAG
    match_mode: MatchMode = MatchMode.ANY_OF_L

    def __post_init__(self):
        object.__setattr__(self, "require_salve", RequireSalve(self.require_salve))
        object.__setattr__(self, "match_mode", MatchMode(self.match_mode))
        if not self.freshness_threshold > 0:
            raise ValueError("freshness threshold must be positive")
        if not self.distance_threshold >= 0:
            raise ValueError("distance threshold must be non-negative")

    def salve_required(self, dns_flag: bool) -> bool:
        if self.require_salve == RequireSalve.ALWAYS:
            return True
        return self.require_salve == RequireSalve.PER_DNS_FLAG and dns_flag

    @classmethod
    def parse(cls, text: str) -> "ClientPolicy":
        cfg = parse_kv(text)
        try:
            return cls(
                freshness_threshold=float(one(cfg, "freshness-threshold", str(DEFAULT_FRESHNESS_S))),
                distance_threshold=float(one(cfg, "distance-threshold", str(DEFAULT_DISTANCE_M))),
                require_salve=one(cfg, "require-salve", RequireSalve.PER_DNS_FLAG.value),
                match_mode=one(cfg, "match-mode", MatchMode.ANY_OF_L.value),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ClientPolicy":
        return cls.parse(Path(path).read_text())


class Reason(str, Enum):
    OK = "ok"
    BAD_SIGNATURE = "bad-signature"
    DIGEST_MISMATCH = "digest-mismatch"
    LOCATION_MISMATCH = "location-mismatch"
    STALE = "stale"
    MERKLE_PROOF_INVALID = "merkle-proof-invalid"
    DOWNGRADE = "downgrade"


@dataclass(frozen=True)
class VerificationVerdict:
    reason: Reason

    @property
    def accepted(self) -> bool:
        return self.reason == Reason.OK


_ALERT_FOR = {
    Reason.BAD_SIGNATURE: AlertCode.BAD_LOCATION_STATEMENT,
    Reason.DIGEST_MISMATCH: AlertCode.BAD_LOCATION_STATEMENT,
    Reason.MERKLE_PROOF_INVALID: AlertCode.BAD_LOCATION_STATEMENT,
    Reason.LOCATION_MISMATCH: AlertCode.LOCATION_MISMATCH,
    Reason.STALE: AlertCode.STALE_STATEMENT,
    Reason.DOWNGRADE: AlertCode.DOWNGRADE_DETECTED,
}


def alert_for(reason: Reason) -> Optional[AlertCode]:
    return _ALERT_FOR.get(Reason(reason))


def _near(a: GeoLocation, b: GeoLocation, threshold: float) -> bool:
    return great_circle_distance(a, b) <= threshold


def _matched_entries(entries: Sequence, legitimate: Sequence[GeoLocation], policy: ClientPolicy) -> list:
    d = policy.distance_threshold
    if policy.match_mode == MatchMode.ANY_OF_L:
        return [e for e in entries if any(_near(e.location, g, d) for g in legitimate)]
    # all-of-L: every legitimate site is covered and no entry lies elsewhere
    covered = all(any(_near(e.location, g, d) for e in entries) for g in legitimate)
    inside = all(any(_near(e.location, g, d) for g in legitimate) for e in entries)
    return list(entries) if covered and inside and legitimate else []


def verify_statement(
    stmt,
    expected_digest: bytes,
    legitimate: Iterable[GeoLocation],
    policy: ClientPolicy,
    now: float,
    gmlc_public: bytes,
    proof: Optional[MerkleProof] = None,
) -> VerificationVerdict:
    """Check signature, session binding, location and freshness, in that order.

    ``stmt`` may be a :class:`LocationStatement` or its serialized bytes;
    anything that does not parse is treated as a bad signature.
    """
    if not isinstance(stmt, LocationStatement):
        try:
            stmt = LocationStatement.from_bytes(bytes(stmt))
        except (CodecError, TypeError):
            return VerificationVerdict(Reason.BAD_SIGNATURE)
    try:
        signed = stmt.verify(gmlc_public)
    except (KeyFormatError, CodecError):
        signed = False
    if not signed:
        return VerificationVerdict(Reason.BAD_SIGNATURE)

    if proof is None:
        if not hmac.compare_digest(stmt.session_digest, expected_digest):
            return VerificationVerdict(Reason.DIGEST_MISMATCH)
    elif not merkle_verify(expected_digest, proof, stmt.session_digest):
        return VerificationVerdict(Reason.MERKLE_PROOF_INVALID)

    matched = _matched_entries(stmt.entries, tuple(legitimate), policy)
    if not matched:
        return VerificationVerdict(Reason.LOCATION_MISMATCH)

    if any(now - e.timestamp > policy.freshness_threshold for e in matched):
        return VerificationVerdict(Reason.STALE)
    return VerificationVerdict(Reason.OK)


# -- client actor -------------------------------------------------------------------------


@dataclass
class ConnectResult:
    domain: str
    reason: str
    salve_verified: bool = False
    records: Optional[ValidatedRecordSet] = None
    session: Optional[ClientSession] = None
    verdict: Optional[VerificationVerdict] = None
    started: float = 0.0
    finished: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.reason == Reason.OK.value

    def as_dict(self) -> dict:
        return {
            "domain": self.domain,
            "accepted": self.accepted,
            "reason": self.reason,
            "salve": self.salve_verified,
            "locations": len(self.records.locations) if self.records else 0,
            "elapsed_ms": round((self.finished - self.started) * 1000, 3),
        }


@dataclass
class ConnectAttempt:
    domain: str
    started: float
    end: Optional[Endpoint] = None
    session: Optional[ClientSession] = None
    records: Optional[ValidatedRecordSet] = None
    verdict: Optional[VerificationVerdict] = None
    result: Optional[ConnectResult] = None
    on_done: Optional[Callable[[ConnectResult], None]] = field(default=None, repr=False)

    @property
    def done(self) -> bool:
        return self.result is not None

    def send_app(self, data: bytes) -> bytes:
        """Seal ``data`` as application traffic and send it; returns the record."""
        record = self.session.seal_app(data)
        self.end.send(record)
        return record


_DNS_REASONS = ((TrustError, "trust-error"), (ValidationError, "validation-error"), (NXDomain, "nxdomain"))


def dns_reason(exc: DnsError) -> str:
    for cls, label in _DNS_REASONS:
        if isinstance(exc, cls):
            return label
    return "dns-error"


class SalveClient:
    """Browser analogue: resolves with laDNS, then runs laTLS over the simulated network."""

    def __init__(
        self,
        net: SimNetwork,
        address: str,
        *,
        resolver: Resolver,
        gmlc_public: bytes,
        trusted_cas: Sequence[bytes],
        policy: ClientPolicy = ClientPolicy(),
        kex: KexMode = KexMode.DHE,
        costs: CostModel = CostModel(),
        rng: Optional[random.Random] = None,
    ):
        self.net = net
        self.address = address
        self.resolver = resolver
        self.gmlc_public = gmlc_public
        self.trusted_cas = tuple(trusted_cas)
        self.policy = policy
        self.kex = kex
        self.costs = costs
        self.rng = rng
        self.cpu = Cpu(net, 1)

    def connect(self, domain: str, on_done: Optional[Callable[[ConnectResult], None]] = None) -> ConnectAttempt:
        attempt = ConnectAttempt(domain, self.net.now, on_done=on_done)
        try:
            attempt.records = self.resolver.ladns_lookup(domain)
        except DnsError as exc:
            self._finish(attempt, dns_reason(exc))
            return attempt
        required = self.policy.salve_required(attempt.records.salve_required)
        session = ClientSession(
            domain,
            self.trusted_cas,
            kex=self.kex,
            offer_salve=self.policy.require_salve != RequireSalve.NEVER,
            require_salve=required,
            statement_handler=lambda payload, s: self._check(attempt, payload, s),
            rng=self.rng,
        )
        attempt.session = session
        try:
            end = self.net.connect(self.address, attempt.records.ip_text)
        except ConnectionRefused:
            self._finish(attempt, "connection-refused")
            return attempt
        attempt.end = end
        end.on_data = lambda data: self._on_data(attempt, data)
        end.on_close = lambda: self._on_close(attempt)
        for m in session.start():
            end.send(m)
        return attempt

    def connect_sync(self, domain: str) -> ConnectResult:
        attempt = self.connect(domain)
        self.net.run(stop=lambda: attempt.done)
        if not attempt.done:
            self._finish(attempt, "incomplete")
        return attempt.result

    def _cost(self, data: bytes) -> float:
        kind = message_type(data)
        if kind == MsgType.SERVER_KEY_SHARE or (kind == MsgType.CERTIFICATE and self.kex == KexMode.STATIC_RSA):
            return self.costs.client_key_exchange
        if kind == MsgType.LOCATION_STATEMENT:
            return self.costs.client_verify
        return 0.0

    def _on_data(self, attempt: ConnectAttempt, data: bytes) -> None:
        if attempt.done:
            return
        self.cpu.submit(self._cost(data), self._process, attempt, data)

    def _process(self, attempt: ConnectAttempt, data: bytes) -> None:
        if attempt.done:
            return
        session = attempt.session
        for m in session.receive(data):
            attempt.end.send(m)
        if session.phase == Phase.ESTABLISHED:
            self._finish(attempt, Reason.OK.value)
        elif session.phase == Phase.ABORTED:
            self._finish(attempt, _failure_reason(attempt))
            attempt.end.close()

    def _on_close(self, attempt: ConnectAttempt) -> None:
        if not attempt.done:
            attempt.session.close()
            self._finish(attempt, _failure_reason(attempt))

    def _check(self, attempt: ConnectAttempt, payload: bytes, session: ClientSession) -> Optional[AlertCode]:
        try:
            stmt, proof = unpack_forwarded(payload)
        except CodecError:
            attempt.verdict = VerificationVerdict(Reason.BAD_SIGNATURE)
        else:
            attempt.verdict = verify_statement(
                stmt,
                session.session_digest,
                attempt.records.locations,
                self.policy,
                self.net.now,
                self.gmlc_public,
                proof,
            )
        return alert_for(attempt.verdict.reason)

    def _finish(self, attempt: ConnectAttempt, reason: str) -> None:
        if attempt.done:
            return
        session = attempt.session
        attempt.result = ConnectResult(
            domain=attempt.domain,
            reason=reason,
            salve_verified=attempt.verdict is not None and attempt.verdict.accepted and reason == Reason.OK.value,
            records=attempt.records,
            session=session,
            verdict=attempt.verdict,
            started=attempt.started,
            finished=self.net.now,
        )
        if attempt.on_done is not None:
            attempt.on_done(attempt.result)


def _failure_reason(attempt: ConnectAttempt) -> str:
    session = attempt.session
    if attempt.verdict is not None and not attempt.verdict.accepted:
        return attempt.verdict.reason.value
    if session.alert == AlertCode.DOWNGRADE_DETECTED:
        return Reason.DOWNGRADE.value
    if session.alert is not None:
        return session.alert.label
    if session.peer_alert is not None:
        return "peer-" + session.peer_alert.label
    return "connection-closed"
