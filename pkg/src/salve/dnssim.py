"""In-process hierarchical DNS with DNSSEC signing and validation.

Zones form a tree (root -> TLD -> domain). ``sign_zone`` publishes a DNSKEY
per zone, signs every record set with one RRSIG and places a DS record for
each child in its parent. ``Resolver`` walks the tree from a trust anchor,
checking every DS/DNSKEY link and every RRSIG it relies on.

Simplifications: one key per zone (no KSK/ZSK split), no NSEC denial of
existence, no name compression, and a fixed canonical form for signing::

    name || type (u16) || ttl (u32) || rdlength (u16) || rdata
"""

from __future__ import annotations

import base64
import ipaddress
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .crypto import SigningIdentity, sha256, verify
from .errors import (
    CodecError,
    KeyFormatError,
    NXDomain,
    TrustError,
    ValidationError,
)
from .geo import GeoLocation, decode_loc, encode_loc, format_loc_text, parse_loc_text


class RRType(IntEnum):
    A = 1
    NS = 2
    LOC = 29
    DS = 43
    RRSIG = 46
    DNSKEY = 48
    # private-use code: "this domain requires location-aware TLS"
    SLVREQ = 65280


DNSSEC_ALGORITHM = 8  # RSA/SHA-256
DS_DIGEST_SHA256 = 2
DNSKEY_FLAGS = 257
DNSKEY_PROTOCOL = 3

DEFAULT_TTL = 3600
# LOC/SLVREQ TTL: one day, well inside the "up to 5 days" common practice
DEFAULT_LOC_TTL = 86_400

# wire accounting for payload sizes
DNS_CLASS_BYTES = 2
DNS_HEADER_BYTES = 12
QUESTION_TRAILER_BYTES = 4

_RRSIG_FIXED = struct.Struct("!HBBIIIH")


def normalize_name(name: str) -> str:
    name = name.strip().lower()
    if not name.endswith("."):
        name += "."
    return name


def name_to_wire(name: str) -> bytes:
    name = normalize_name(name)
    out = bytearray()
    if name != ".":
        for label in name[:-1].split("."):
            raw = label.encode("ascii")
            if not 0 < len(raw) < 64:
                raise CodecError(f"bad label in {name!r}")
            out.append(len(raw))
            out += raw
    out.append(0)
    return bytes(out)


def name_from_wire(buf: bytes, off: int = 0) -> tuple:
    labels = []
    while True:
        if off >= len(buf):
            raise CodecError("truncated domain name")
        n = buf[off]
        off += 1
        if n == 0:
            break
        if n > 63 or off + n > len(buf):
            raise CodecError("bad label length")
        try:
            labels.append(buf[off : off + n].decode("ascii"))
        except UnicodeDecodeError as exc:
            raise CodecError("non-ASCII label") from exc
        off += n
    return normalize_name(".".join(labels)), off


def label_count(name: str) -> int:
    name = normalize_name(name)
    return 0 if name == "." else name.count(".")


def is_subdomain(name: str, apex: str) -> bool:
    name, apex = normalize_name(name), normalize_name(apex)
    return apex == "." or name == apex or name.endswith("." + apex)


@dataclass(frozen=True)
class ResourceRecord:
    name: str
    rrtype: RRType
    ttl: int
    rdata: bytes

    def __post_init__(self):
        object.__setattr__(self, "name", normalize_name(self.name))
        object.__setattr__(self, "rrtype", RRType(self.rrtype))
        if not 0 <= self.ttl < 2**32:
            raise CodecError("ttl out of range")
        if self.rrtype == RRType.A and len(self.rdata) != 4:
            raise CodecError("A rdata must be 4 bytes")
        if self.rrtype == RRType.LOC and len(self.rdata) != 16:
            raise CodecError("LOC rdata must be 16 bytes")
        if self.rrtype == RRType.SLVREQ and len(self.rdata) != 1:
            raise CodecError("SLVREQ rdata must be 1 byte")

    def to_wire(self) -> bytes:
        return (
            name_to_wire(self.name)
            + struct.pack("!HIH", self.rrtype, self.ttl, len(self.rdata))
            + self.rdata
        )

    @classmethod
    def from_wire(cls, buf: bytes, off: int = 0) -> tuple:
        name, off = name_from_wire(buf, off)
        if off + 8 > len(buf):
            raise CodecError("truncated record header")
        rrtype, ttl, rdlen = struct.unpack_from("!HIH", buf, off)
        off += 8
        if off + rdlen > len(buf):
            raise CodecError("truncated rdata")
        try:
            rtype = RRType(rrtype)
        except ValueError as exc:
            raise CodecError(f"unknown rrtype {rrtype}") from exc
        return cls(name, rtype, ttl, bytes(buf[off : off + rdlen])), off + rdlen

    @property
    def wire_size(self) -> int:
        """Size in a DNS message (canonical form plus the class field)."""
        return len(self.to_wire()) + DNS_CLASS_BYTES


# -- rdata helpers ---------------------------------------------------------------------


def a_record(name: str, ip: str, ttl: int = DEFAULT_TTL) -> ResourceRecord:
    return ResourceRecord(name, RRType.A, ttl, ipaddress.IPv4Address(ip).packed)


def loc_record(name: str, g: GeoLocation, ttl: int = DEFAULT_LOC_TTL) -> ResourceRecord:
    return ResourceRecord(name, RRType.LOC, ttl, encode_loc(g))


def slvreq_record(name: str, required: bool = True, ttl: int = DEFAULT_LOC_TTL) -> ResourceRecord:
    return ResourceRecord(name, RRType.SLVREQ, ttl, bytes([1 if required else 0]))


def ns_record(name: str, target: str, ttl: int = DEFAULT_TTL) -> ResourceRecord:
    return ResourceRecord(name, RRType.NS, ttl, name_to_wire(target))


def dnskey_rdata(identity: SigningIdentity) -> bytes:
    return struct.pack("!HBB", DNSKEY_FLAGS, DNSKEY_PROTOCOL, DNSSEC_ALGORITHM) + identity.public


def dnskey_public(rdata: bytes) -> bytes:
    if len(rdata) < 4:
        raise CodecError("DNSKEY rdata too short")
    return rdata[4:]


def key_tag(rdata: bytes) -> int:
    """RFC 4034 Appendix B key tag."""
    acc = 0
    for i, byte in enumerate(rdata):
        acc += byte if i & 1 else byte << 8
    acc += (acc >> 16) & 0xFFFF
    return acc & 0xFFFF


def ds_rdata(child_dnskey_rdata: bytes) -> bytes:
    return struct.pack("!HBB", key_tag(child_dnskey_rdata), DNSSEC_ALGORITHM, DS_DIGEST_SHA256) + sha256(
        child_dnskey_rdata
    )


@dataclass(frozen=True)
class RRSig:
    type_covered: int
    algorithm: int
    labels: int
    original_ttl: int
    expiration: int
    inception: int
    key_tag: int
    signer: str
    signature: bytes

    def signed_prefix(self) -> bytes:
        return (
            _RRSIG_FIXED.pack(
                self.type_covered,
                self.algorithm,
                self.labels,
                self.original_ttl,
                self.expiration,
                self.inception,
                self.key_tag,
            )
            + name_to_wire(self.signer)
        )

    def to_rdata(self) -> bytes:
        return self.signed_prefix() + self.signature

    @classmethod
    def from_rdata(cls, rdata: bytes) -> "RRSig":
        if len(rdata) < _RRSIG_FIXED.size + 1:
            raise CodecError("RRSIG rdata too short")
        fixed = _RRSIG_FIXED.unpack_from(rdata)
        signer, off = name_from_wire(rdata, _RRSIG_FIXED.size)
        return cls(*fixed, signer=signer, signature=rdata[off:])


def canonical_rrset(records: Iterable[ResourceRecord]) -> bytes:
    return b"".join(sorted(r.to_wire() for r in records))


def _signing_input(sig: RRSig, records: Iterable[ResourceRecord]) -> bytes:
    return sig.signed_prefix() + canonical_rrset(records)


# -- zones -------------------------------------------------------------------------------


@dataclass(frozen=True)
class Zone:
    apex: str
    records: tuple = ()
    identity: Optional[SigningIdentity] = field(default=None, repr=False)
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "apex", normalize_name(self.apex))
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "children", tuple(self.children))

    def rrset(self, name: str, rrtype: RRType) -> list:
        name = normalize_name(name)
        return [r for r in self.records if r.name == name and r.rrtype == rrtype]

    def rrsigs(self, name: str, covered: RRType) -> list:
        name = normalize_name(name)
        out = []
        for r in self.records:
            if r.name == name and r.rrtype == RRType.RRSIG:
                try:
                    if RRSig.from_rdata(r.rdata).type_covered == covered:
                        out.append(r)
                except CodecError:
                    out.append(r)  # unparseable: surfaced as a bad signature later
        return out

    def child_for(self, name: str) -> Optional["Zone"]:
        """Deepest delegated child zone containing ``name``."""
        best = None
        for child in self.children:
            if is_subdomain(name, child.apex) and child.apex != self.apex:
                if best is None or len(child.apex) > len(best.apex):
                    best = child
        return best

    def with_records(self, records: Iterable[ResourceRecord]) -> "Zone":
        return replace(self, records=tuple(records))

    def with_child(self, child: "Zone") -> "Zone":
        others = tuple(c for c in self.children if c.apex != child.apex)
        return replace(self, children=others + (child,))

    def find(self, apex: str) -> Optional["Zone"]:
        apex = normalize_name(apex)
        if self.apex == apex:
            return self
        for child in self.children:
            hit = child.find(apex)
            if hit is not None:
                return hit
        return None

    def replace_zone(self, updated: "Zone") -> "Zone":
        """Return a copy of this tree with the zone at ``updated.apex`` swapped in."""
        if self.apex == updated.apex:
            return updated
        return replace(self, children=tuple(c.replace_zone(updated) for c in self.children))

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def _group(records: Iterable[ResourceRecord]) -> dict:
    sets = defaultdict(list)
    for r in records:
        sets[(r.name, r.rrtype)].append(r)
    return sets


def make_rrsig(
    records: list,
    identity: SigningIdentity,
    signer: str,
    *,
    inception: int = 0,
    expiration: int = 2**32 - 1,
) -> ResourceRecord:
    first = records[0]
    keyrec = dnskey_rdata(identity)
    sig = RRSig(
        type_covered=first.rrtype,
        algorithm=DNSSEC_ALGORITHM,
        labels=label_count(first.name),
        original_ttl=first.ttl,
        expiration=expiration,
        inception=inception,
        key_tag=key_tag(keyrec),
        signer=normalize_name(signer),
        signature=b"",
    )
    sig = replace(sig, signature=identity.sign(_signing_input(sig, records)))
    return ResourceRecord(first.name, RRType.RRSIG, first.ttl, sig.to_rdata())


def sign_zone(
    zone: Zone,
    *,
    inception: int = 0,
    expiration: int = 2**32 - 1,
    dnskey_ttl: int = DEFAULT_TTL,
) -> Zone:
    """Sign ``zone`` and all of its children, linking each child with a DS record."""
    if zone.identity is None or not zone.identity.has_private:
        raise KeyFormatError(f"zone {zone.apex} has no private signing key")
    children = tuple(
        sign_zone(c, inception=inception, expiration=expiration, dnskey_ttl=dnskey_ttl)
        for c in zone.children
    )
    managed = (RRType.DNSKEY, RRType.RRSIG, RRType.DS)
    base = [r for r in zone.records if r.rrtype not in managed]
    for child in children:
        if not any(r.name == child.apex and r.rrtype == RRType.NS for r in base):
            base.append(ns_record(child.apex, "ns1." + child.apex))
        child_key = child.rrset(child.apex, RRType.DNSKEY)[0]
        base.append(ResourceRecord(child.apex, RRType.DS, DEFAULT_TTL, ds_rdata(child_key.rdata)))
    base.append(ResourceRecord(zone.apex, RRType.DNSKEY, dnskey_ttl, dnskey_rdata(zone.identity)))
    sigs = [
        make_rrsig(rrset, zone.identity, zone.apex, inception=inception, expiration=expiration)
        for _, rrset in sorted(_group(base).items())
    ]
    return replace(zone, records=tuple(base) + tuple(sigs), children=children)


def trust_anchor(root: Zone) -> bytes:
    """Digest of the root zone's DNSKEY, as provisioned into clients."""
    keys = root.rrset(root.apex, RRType.DNSKEY)
    if not keys:
        raise KeyFormatError("root zone is not signed")
    return sha256(keys[0].rdata)


# -- validation --------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidatedRecordSet:
    domain: str
    ip: bytes
    locations: tuple = ()
    salve_required: bool = False
    chain: tuple = ()
    ttl: int = DEFAULT_TTL
    ladns_extra_bytes: int = 0

    @property
    def ip_text(self) -> str:
        return str(ipaddress.IPv4Address(self.ip))


# (zone apex, qname, qtype, records) -> records; lets tests and adversaries
# rewrite responses in transit
Interceptor = Callable[[str, str, RRType, list], list]


class Resolver:
    """Validating stub resolver with a TTL cache over a pluggable clock."""

    def __init__(
        self,
        root: Zone,
        anchor: bytes,
        *,
        clock: Callable[[], float] = time.time,
        interceptor: Optional[Interceptor] = None,
    ):
        self.root = root
        self.anchor = anchor
        self.clock = clock
        self.interceptor = interceptor
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.lookups = 0

    def _query(self, zone: Zone, name: str, rrtype: RRType) -> tuple:
        records = zone.rrset(name, rrtype) + zone.rrsigs(name, rrtype)
        if self.interceptor is not None:
            records = list(self.interceptor(zone.apex, normalize_name(name), rrtype, records))
        data = [r for r in records if r.rrtype == rrtype]
        sigs = [r for r in records if r.rrtype == RRType.RRSIG]
        return data, sigs

    def _validated(self, zone: Zone, key_rdata: bytes, name: str, rrtype: RRType) -> tuple:
        data, sigs = self._query(zone, name, rrtype)
        if not data and not sigs:
            return [], None
        if not data:
            raise ValidationError(f"RRSIG for {name} {rrtype.name} without covered records")
        if not sigs:
            raise ValidationError(f"{name} {rrtype.name} is not signed")
        now = int(self.clock())
        public = dnskey_public(key_rdata)
        for sig_rr in sigs:
            try:
                sig = RRSig.from_rdata(sig_rr.rdata)
            except CodecError:
                continue
            if (
                sig.type_covered != rrtype
                or sig.signer != zone.apex
                or sig.key_tag != key_tag(key_rdata)
                or sig.algorithm != DNSSEC_ALGORITHM
                or sig.labels != label_count(name)
                or sig_rr.name != normalize_name(name)
                or not sig.inception <= now <= sig.expiration
                or any(r.ttl != sig.original_ttl for r in data)
            ):
                continue
            if verify(public, _signing_input(sig, data), sig.signature):
                return data, sig_rr
        raise ValidationError(f"no valid RRSIG over {name} {rrtype.name} in zone {zone.apex}")

    def _zone_key(self, zone: Zone) -> bytes:
        keys, _ = self._query(zone, zone.apex, RRType.DNSKEY)
        if len(keys) != 1:
            raise TrustError(f"zone {zone.apex} must publish exactly one DNSKEY")
        return keys[0].rdata

    def _walk(self, domain: str) -> ValidatedRecordSet:
        domain = normalize_name(domain)
        zone = self.root
        key = self._zone_key(zone)
        if sha256(key) != self.anchor:
            raise TrustError("root DNSKEY does not match the trust anchor")
        try:
            self._validated(zone, key, zone.apex, RRType.DNSKEY)
        except ValidationError as exc:
            raise TrustError(f"root DNSKEY self-signature invalid: {exc}") from exc
        chain = [(zone.apex, sha256(key))]

        while True:
            child = zone.child_for(domain)
            if child is None:
                break
            ds_set, _ = self._validated(zone, key, child.apex, RRType.DS)
            ns_set, _ = self._validated(zone, key, child.apex, RRType.NS)
            if not ds_set or not ns_set:
                raise ValidationError(f"delegation to {child.apex} is missing signed DS/NS")
            child_key = self._zone_key(child)
            digests = {ds.rdata[4:] for ds in ds_set}
            if sha256(child_key) not in digests:
                raise TrustError(f"DNSKEY of {child.apex} does not match the DS in {zone.apex}")
            try:
                self._validated(child, child_key, child.apex, RRType.DNSKEY)
            except ValidationError as exc:
                raise TrustError(f"DNSKEY self-signature of {child.apex} invalid") from exc
            zone, key = child, child_key
            chain.append((zone.apex, sha256(key)))

        a_set, a_sig = self._validated(zone, key, domain, RRType.A)
        loc_set, loc_sig = self._validated(zone, key, domain, RRType.LOC)
        flag_set, _ = self._validated(zone, key, domain, RRType.SLVREQ)
        if not a_set:
            raise NXDomain(domain)
        locations = tuple(decode_loc(r.rdata) for r in sorted(loc_set, key=lambda r: r.rdata))
        salve_required = any(r.rdata != b"\x00" for r in flag_set)
        if salve_required and not locations:
            raise ValidationError(f"{domain} requires SALVE but publishes no LOC records")
        extra = 0
        if loc_set:
            question = len(name_to_wire(domain)) + QUESTION_TRAILER_BYTES
            extra = (
                DNS_HEADER_BYTES
                + question
                + sum(r.wire_size for r in loc_set)
                + loc_sig.wire_size
            )
        ttl = min(r.ttl for r in a_set + loc_set + flag_set)
        return ValidatedRecordSet(
            domain=domain,
            ip=a_set[0].rdata,
            locations=locations,
            salve_required=salve_required,
            chain=tuple(chain),
            ttl=ttl,
            ladns_extra_bytes=extra,
        )

    def resolve(self, domain: str) -> ValidatedRecordSet:
        domain = normalize_name(domain)
        now = self.clock()
        with self._lock:
            hit = self._cache.get(domain)
            if hit is not None and hit[1] > now:
                return hit[0]
        result = self._walk(domain)
        self.lookups += 1
        with self._lock:
            self._cache[domain] = (result, now + result.ttl)
        return result

    def ladns_lookup(self, domain: str) -> ValidatedRecordSet:
        return self.resolve(domain)

    def flush(self) -> None:
        with self._lock:
            self._cache.clear()


def resolve(domain: str, root: Zone, anchor: bytes, *, now: Optional[float] = None) -> ValidatedRecordSet:
    clock = time.time if now is None else (lambda: now)
    return Resolver(root, anchor, clock=clock).resolve(domain)


def ladns_lookup(domain: str, root: Zone, anchor: bytes, *, now: Optional[float] = None) -> ValidatedRecordSet:
    """Location-aware lookup: IP, every legitimate location and the SALVE flag."""
    clock = time.time if now is None else (lambda: now)
    return Resolver(root, anchor, clock=clock).ladns_lookup(domain)


# -- zone files ----------------------------------------------------------------------------


def _rdata_text(r: ResourceRecord) -> str:
    if r.rrtype == RRType.A:
        return str(ipaddress.IPv4Address(r.rdata))
    if r.rrtype == RRType.NS:
        return name_from_wire(r.rdata)[0]
    if r.rrtype == RRType.LOC:
        return format_loc_text(decode_loc(r.rdata))
    if r.rrtype == RRType.SLVREQ:
        return str(r.rdata[0])
    return base64.b64encode(r.rdata).decode("ascii")


def _rdata_from_text(rrtype: RRType, text: str) -> bytes:
    if rrtype == RRType.A:
        return ipaddress.IPv4Address(text).packed
    if rrtype == RRType.NS:
        return name_to_wire(text)
    if rrtype == RRType.LOC:
        return encode_loc(parse_loc_text(text))
    if rrtype == RRType.SLVREQ:
        return bytes([int(text)])
    return base64.b64decode(text)


def format_zone_text(records: Iterable[ResourceRecord]) -> str:
    return "".join(f"{r.name} {r.ttl} {r.rrtype.name} {_rdata_text(r)}\n" for r in records)


def parse_zone_text(text: str) -> list:
    """Parse ``name TTL TYPE rdata-text`` lines; ``;`` starts a comment."""
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 3)
        if len(parts) != 4:
            raise CodecError(f"line {lineno}: expected 'name TTL TYPE rdata'")
        name, ttl, rtype, rdata = parts
        try:
            rrtype = RRType[rtype.upper()]
        except KeyError as exc:
            raise CodecError(f"line {lineno}: unknown type {rtype}") from exc
        records.append(ResourceRecord(name, rrtype, int(ttl), _rdata_from_text(rrtype, rdata)))
    return records


def zone_file_name(apex: str) -> str:
    apex = normalize_name(apex)
    return ("root" if apex == "." else apex.rstrip(".")) + ".zone.bin"


def write_zone_binary(zone: Zone, path) -> None:
    """Length-prefixed (u32) canonical records, one file per zone."""
    with open(path, "wb") as fh:
        for r in zone.records:
            wire = r.to_wire()
            fh.write(struct.pack("!I", len(wire)) + wire)


def read_zone_binary(path) -> list:
    data = Path(path).read_bytes()
    records, off = [], 0
    while off < len(data):
        if off + 4 > len(data):
            raise CodecError("truncated length prefix")
        (n,) = struct.unpack_from("!I", data, off)
        off += 4
        record, end = ResourceRecord.from_wire(data, off)
        if end != off + n:
            raise CodecError("record length prefix mismatch")
        records.append(record)
        off = end
    return records


def write_signed_tree(root: Zone, directory) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for zone in root.walk():
        path = directory / zone_file_name(zone.apex)
        write_zone_binary(zone, path)
        written.append(path)
    (directory / "trust-anchor.hex").write_text(trust_anchor(root).hex() + "\n")
    return written
