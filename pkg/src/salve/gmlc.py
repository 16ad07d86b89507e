"""Gateway Mobile Location Center: SIM registry and signed location statements.

Servers query the GMLC with an MLP-like XML request carrying their
credential, the SIMs to report and the session digest h(k). An authorized
request is answered with a :class:`LocationStatement` signed under the
GMLC key, covering the digest verbatim plus each SIM's last localization.
"""

from __future__ import annotations

import base64
import hmac
import struct
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional
from xml.sax.saxutils import escape

from .crypto import DIGEST_SIZE, SigningIdentity, verify
from .errors import CodecError, StaleUpdate, UnknownSim
from .geo import LOC_SIZE, GeoLocation, decode_loc, encode_loc, quantize
from .merkle import MerkleProof

STATEMENT_VERSION = 1
MLP_VERSION = "3.2.0"


@dataclass
class SimRecord:
    sim_id: str
    owner_credential: str
    location: GeoLocation
    localized_at: int


@dataclass(frozen=True)
class StatementEntry:
    sim_id: str
    location: GeoLocation
    timestamp: int

    def __post_init__(self):
        # statements carry LOC-encoded positions; normalise so that equality
        # matches the signed bytes
        object.__setattr__(self, "location", quantize(self.location))
        if not 0 <= self.timestamp < 2**64:
            raise CodecError("timestamp out of range")
        if not 0 < len(self.sim_id.encode()) < 256:
            raise CodecError("sim-id must be 1..255 bytes")


@dataclass(frozen=True)
class LocationStatement:
    session_digest: bytes
    entries: tuple
    signature: bytes = b""
    version: int = STATEMENT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.session_digest) != DIGEST_SIZE:
            raise CodecError("session digest must be 32 bytes")
        if not self.entries:
            raise CodecError("a location statement needs at least one entry")

    def canonical_bytes(self) -> bytes:
        return canonical_statement_bytes(self)

    def to_bytes(self) -> bytes:
        body = self.canonical_bytes()
        return struct.pack("!H", len(body)) + body + struct.pack("!H", len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "LocationStatement":
        try:
            (n,) = struct.unpack_from("!H", data)
            body = data[2 : 2 + n]
            (m,) = struct.unpack_from("!H", data, 2 + n)
            sig = data[4 + n : 4 + n + m]
        except struct.error as exc:
            raise CodecError("truncated location statement") from exc
        if len(body) != n or len(sig) != m or len(data) != 4 + n + m:
            raise CodecError("location statement length mismatch")
        stmt = parse_canonical_statement(body)
        return LocationStatement(stmt.session_digest, stmt.entries, sig, stmt.version)

    def verify(self, gmlc_public: bytes) -> bool:
        return verify(gmlc_public, self.canonical_bytes(), self.signature)


def canonical_statement_bytes(stmt: LocationStatement) -> bytes:
    """Deterministic, length-prefixed serialization of everything but the signature."""
    out = [struct.pack("!B", stmt.version), stmt.session_digest, struct.pack("!H", len(stmt.entries))]
    for e in stmt.entries:
        sim = e.sim_id.encode()
        out.append(struct.pack("!B", len(sim)) + sim + encode_loc(e.location) + struct.pack("!Q", e.timestamp))
    return b"".join(out)


def parse_canonical_statement(body: bytes) -> LocationStatement:
    try:
        version = body[0]
        digest = body[1 : 1 + DIGEST_SIZE]
        (count,) = struct.unpack_from("!H", body, 1 + DIGEST_SIZE)
        off = 3 + DIGEST_SIZE
        entries = []
        for _ in range(count):
            n = body[off]
            sim = body[off + 1 : off + 1 + n].decode()
            off += 1 + n
            loc = decode_loc(body[off : off + LOC_SIZE])
            (t,) = struct.unpack_from("!Q", body, off + LOC_SIZE)
            off += LOC_SIZE + 8
            entries.append(StatementEntry(sim, loc, t))
    except (IndexError, struct.error, UnicodeDecodeError) as exc:
        raise CodecError("malformed statement body") from exc
    if off != len(body):
        raise CodecError("trailing bytes after statement body")
    if version != STATEMENT_VERSION:
        raise CodecError(f"unsupported statement version {version}")
    return LocationStatement(digest, tuple(entries), b"", version)


def sign_statement(identity: SigningIdentity, session_digest: bytes, entries: Iterable[StatementEntry]) -> LocationStatement:
    stmt = LocationStatement(session_digest, tuple(sorted(entries, key=lambda e: e.sim_id)))
    return LocationStatement(stmt.session_digest, stmt.entries, identity.sign(stmt.canonical_bytes()))


@dataclass(frozen=True)
class RawStatement:
    """A signed statement as received from the GMLC, body left undecoded.

    Servers only need the echoed digest and the bytes to forward, so they
    skip parsing the entries.
    """

    body: bytes
    signature: bytes

    @classmethod
    def from_joined(cls, raw: bytes) -> "RawStatement":
        n = _canonical_length(raw)
        if n > len(raw):
            raise CodecError("truncated statement")
        return cls(raw[:n], raw[n:])

    @property
    def session_digest(self) -> bytes:
        return self.body[1 : 1 + DIGEST_SIZE]

    def to_bytes(self) -> bytes:
        return struct.pack("!H", len(self.body)) + self.body + struct.pack("!H", len(self.signature)) + self.signature

    def decode(self) -> LocationStatement:
        stmt = parse_canonical_statement(self.body)
        return LocationStatement(stmt.session_digest, stmt.entries, self.signature, stmt.version)


def pack_forwarded(stmt, proof: Optional[MerkleProof] = None) -> bytes:
    """Server-to-client payload: u32 len || statement || u8 has_proof || proof."""
    raw = stmt.to_bytes()
    tail = b"\x00" if proof is None else b"\x01" + proof.to_bytes()
    return struct.pack("!I", len(raw)) + raw + tail


def unpack_forwarded(data: bytes) -> tuple:
    """Inverse of :func:`pack_forwarded`; returns (statement, proof or None)."""
    if len(data) < 5:
        raise CodecError("truncated forwarded statement")
    (n,) = struct.unpack_from("!I", data)
    if len(data) < 5 + n:
        raise CodecError("truncated forwarded statement")
    stmt = LocationStatement.from_bytes(data[4 : 4 + n])
    flag, rest = data[4 + n], data[5 + n :]
    if flag == 0 and not rest:
        return stmt, None
    if flag == 1:
        return stmt, MerkleProof.from_bytes(rest)
    raise CodecError("bad proof marker in forwarded statement")


# -- registry -----------------------------------------------------------------------------


class SimRegistry:
    """SIM locations and the credentials allowed to query them.

    One lock serialises writers against readers; readers get copies, so an
    issued statement never mixes the location of one update with the time
    of another.
    """

    def __init__(self, records: Iterable[SimRecord] = ()):
        self._sims: dict = {}
        self._grants: dict = {}
        self._lock = threading.Lock()
        for r in records:
            self.register(r)

    def register(self, record: SimRecord) -> None:
        with self._lock:
            self._sims[record.sim_id] = SimRecord(
                record.sim_id, record.owner_credential, record.location, int(record.localized_at)
            )

    def authorize(self, credential: str, sim_id: str) -> None:
        """Let ``credential`` query ``sim_id`` in addition to its owner."""
        with self._lock:
            if sim_id not in self._sims:
                raise UnknownSim(sim_id)
            self._grants.setdefault(sim_id, set()).add(credential)

    def update_location(self, sim_id: str, location: GeoLocation, t: int) -> None:
        with self._lock:
            record = self._sims.get(sim_id)
            if record is None:
                raise UnknownSim(sim_id)
            if t < record.localized_at:
                raise StaleUpdate(f"{sim_id}: update at {t} older than {record.localized_at}")
            self._sims[sim_id] = SimRecord(sim_id, record.owner_credential, location, int(t))

    def get(self, sim_id: str) -> SimRecord:
        with self._lock:
            record = self._sims.get(sim_id)
            if record is None:
                raise UnknownSim(sim_id)
            return SimRecord(record.sim_id, record.owner_credential, record.location, record.localized_at)

    def sim_ids(self) -> list:
        with self._lock:
            return sorted(self._sims)

    def known_credential(self, credential: str) -> bool:
        with self._lock:
            creds = [r.owner_credential for r in self._sims.values()]
            creds += [c for grants in self._grants.values() for c in grants]
        # compare against every candidate so timing does not depend on the match position
        return any([hmac.compare_digest(credential.encode(), c.encode()) for c in creds])

    def is_authorized(self, credential: str, sim_id: str) -> bool:
        with self._lock:
            record = self._sims.get(sim_id)
            if record is None:
                return False
            allowed = [record.owner_credential, *self._grants.get(sim_id, ())]
        return any([hmac.compare_digest(credential.encode(), c.encode()) for c in allowed])

    def snapshot(self, sim_ids: Iterable[str]) -> list:
        with self._lock:
            return [
                SimRecord(r.sim_id, r.owner_credential, r.location, r.localized_at)
                for r in (self._sims[s] for s in sim_ids)
            ]

    @classmethod
    def load(cls, path) -> "SimRegistry":
        return cls.parse(Path(path).read_text())

    @classmethod
    def parse(cls, text: str) -> "SimRegistry":
        """Lines of ``sim-id credential lat lon alt localized-at``; ``#`` comments."""
        registry = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise CodecError(f"registry line {lineno}: expected 6 fields")
            sim, cred, lat, lon, alt, t = parts
            registry.register(SimRecord(sim, cred, GeoLocation(float(lat), float(lon), float(alt)), int(t)))
        return registry

    def dump(self) -> str:
        with self._lock:
            rows = sorted(self._sims.values(), key=lambda r: r.sim_id)
        return "".join(
            f"{r.sim_id} {r.owner_credential} {r.location.latitude} {r.location.longitude} "
            f"{r.location.altitude} {r.localized_at}\n"
            for r in rows
        )


# -- MLP-like messages --------------------------------------------------------------------


class MlpStatus(str, Enum):
    OK = "OK"
    UNAUTHORIZED = "UNAUTHORIZED"
    UNKNOWN_SIM = "UNKNOWN_SIM"


@dataclass(frozen=True)
class MlpRequest:
    credential: str
    sim_ids: tuple
    session_digest: bytes
    request_id: int = 0

    def to_xml(self) -> bytes:
        # built from a template: this runs once per handshake on the server
        msids = "".join(f"<msid>{escape(sim)}</msid>" for sim in self.sim_ids)
        return (
            f'<svc_init ver="{MLP_VERSION}"><hdr><client><pwd>{escape(self.credential)}</pwd></client>'
            f"<requestid>{int(self.request_id)}</requestid></hdr>"
            f'<slir ver="{MLP_VERSION}"><msids>{msids}</msids>'
            f"<session_digest>{self.session_digest.hex()}</session_digest></slir></svc_init>"
        ).encode()

    @classmethod
    def from_xml(cls, data: bytes) -> "MlpRequest":
        try:
            root = ET.fromstring(data)
            if root.tag != "svc_init":
                raise CodecError(f"unexpected MLP element {root.tag}")
            return cls(
                credential=root.findtext("hdr/client/pwd") or "",
                sim_ids=tuple(e.text or "" for e in root.findall("slir/msids/msid")),
                session_digest=bytes.fromhex(root.findtext("slir/session_digest") or ""),
                request_id=int(root.findtext("hdr/requestid") or 0),
            )
        except (ET.ParseError, ValueError) as exc:
            raise CodecError("malformed MLP request") from exc


def statement_xml(stmt: LocationStatement) -> bytes:
    """The statement element forwarded to clients: Base64 of canonical bytes || signature."""
    el = ET.Element("location_statement")
    el.text = base64.b64encode(stmt.canonical_bytes() + stmt.signature).decode("ascii")
    return ET.tostring(el)


def statement_from_xml_element(el: ET.Element, *, decode: bool = True):
    """Statement carried in ``el``; a :class:`RawStatement` when ``decode`` is false."""
    raw = base64.b64decode(el.text or "", validate=True)
    # canonical body length is fixed by the entry count, signature takes the rest
    stmt = RawStatement.from_joined(raw)
    return stmt.decode() if decode else stmt


def _canonical_length(raw: bytes) -> int:
    try:
        (count,) = struct.unpack_from("!H", raw, 1 + DIGEST_SIZE)
        off = 3 + DIGEST_SIZE
        for _ in range(count):
            off += 1 + raw[off] + LOC_SIZE + 8
    except (IndexError, struct.error) as exc:
        raise CodecError("truncated statement") from exc
    return off


@dataclass(frozen=True)
class MlpResponse:
    status: MlpStatus
    statement: Optional[LocationStatement] = None
    request_id: int = 0

    def to_xml(self) -> bytes:
        root = ET.Element("svc_result", ver=MLP_VERSION)
        slia = ET.SubElement(root, "slia", ver=MLP_VERSION)
        ET.SubElement(slia, "requestid").text = str(self.request_id)
        ET.SubElement(slia, "result").text = self.status.value
        if self.statement is not None:
            slia.append(ET.fromstring(statement_xml(self.statement)))
        return ET.tostring(root)

    @classmethod
    def from_xml(cls, data: bytes, *, decode: bool = True) -> "MlpResponse":
        try:
            root = ET.fromstring(data)
            status = MlpStatus(root.findtext("slia/result"))
            el = root.find("slia/location_statement")
            stmt = statement_from_xml_element(el, decode=decode) if el is not None else None
            return cls(status, stmt, int(root.findtext("slia/requestid") or 0))
        except (ET.ParseError, ValueError) as exc:
            raise CodecError("malformed MLP response") from exc


def issue_statement(registry: SimRegistry, identity: SigningIdentity, request: MlpRequest) -> MlpResponse:
    """Answer one location request; the session digest is echoed, never inspected."""
    rid = request.request_id
    if not request.sim_ids or not registry.known_credential(request.credential):
        return MlpResponse(MlpStatus.UNAUTHORIZED, request_id=rid)
    known = set(registry.sim_ids())
    for sim in request.sim_ids:
        if sim not in known:
            return MlpResponse(MlpStatus.UNKNOWN_SIM, request_id=rid)
        if not registry.is_authorized(request.credential, sim):
            return MlpResponse(MlpStatus.UNAUTHORIZED, request_id=rid)
    try:
        records = registry.snapshot(request.sim_ids)
    except KeyError:
        return MlpResponse(MlpStatus.UNKNOWN_SIM, request_id=rid)
    entries = [StatementEntry(r.sim_id, r.location, r.localized_at) for r in records]
    try:
        stmt = sign_statement(identity, request.session_digest, entries)
    except CodecError:
        return MlpResponse(MlpStatus.UNAUTHORIZED, request_id=rid)
    return MlpResponse(MlpStatus.OK, stmt, rid)


@dataclass
class GmlcService:
    """A GMLC instance: registry plus signing key, with request bookkeeping."""

    registry: SimRegistry
    identity: SigningIdentity = field(repr=False)
    # when set, SIMs are re-localized at request time instead of reporting
    # the last stored fix
    clock: Optional[Callable[[], float]] = field(default=None, repr=False)
    requests_served: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def public_key(self) -> bytes:
        return self.identity.public

    def handle(self, request: MlpRequest) -> MlpResponse:
        with self._lock:
            self.requests_served += 1
        if self.clock is not None:
            self._relocalize(request.sim_ids, int(self.clock()))
        return issue_statement(self.registry, self.identity, request)

    def _relocalize(self, sim_ids: Iterable[str], t: int) -> None:
        for sim in sim_ids:
            try:
                record = self.registry.get(sim)
                self.registry.update_location(sim, record.location, max(t, record.localized_at))
            except UnknownSim:
                continue

    def handle_xml(self, data: bytes) -> bytes:
        try:
            request = MlpRequest.from_xml(data)
        except CodecError:
            return MlpResponse(MlpStatus.UNAUTHORIZED).to_xml()
        return self.handle(request).to_xml()
