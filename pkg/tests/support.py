"""Helpers shared by the unit and acceptance tests."""

from __future__ import annotations

import random
from dataclasses import dataclass

from salve.client import ClientPolicy, verify_statement
from salve.dnssim import Resolver, ResourceRecord, RRSig, RRType, Zone
from salve.errors import CodecError, DnsError
from salve.gmlc import MlpRequest, pack_forwarded, unpack_forwarded
from salve.minitls import AlertCode, ClientSession, KexMode, Phase, ServerSession

# -- DNSSEC mutation sweep ------------------------------------------------------------------


@dataclass(frozen=True)
class Mutation:
    apex: str
    record: ResourceRecord
    position: int
    effective: bool  # False when the mutated bytes parse back to the same record
    detected: bool


def mutate_once(root: Zone, anchor: bytes, domain: str, rng: random.Random, now: float) -> Mutation:
    """Change one byte of one signed record (or of an RRSIG's rdata) and resolve.

    Names compare case-insensitively, so a flip that only changes letter
    case (in an owner name or an RRSIG signer name) yields the same record
    and is reported as not effective.
    """
    zone = rng.choice(list(root.walk()))
    record = rng.choice(zone.records)
    wire = record.to_wire()
    # the TTL of an RRSIG record is not covered by any signature; only its rdata is
    lo = len(wire) - len(record.rdata) if record.rrtype == RRType.RRSIG else 0
    pos = rng.randrange(lo, len(wire))
    mutated = bytearray(wire)
    mutated[pos] ^= rng.randrange(1, 256)
    try:
        changed, end = ResourceRecord.from_wire(bytes(mutated))
    except (CodecError, ValueError):
        return Mutation(zone.apex, record, pos, True, True)
    if end != len(mutated):
        return Mutation(zone.apex, record, pos, True, True)
    if _equivalent(changed, record):
        return Mutation(zone.apex, record, pos, False, False)
    tree = root.replace_zone(zone.with_records(changed if r is record else r for r in zone.records))
    try:
        Resolver(tree, anchor, clock=lambda: now).resolve(domain)
    except DnsError:
        return Mutation(zone.apex, record, pos, True, True)
    return Mutation(zone.apex, record, pos, True, False)


def _equivalent(a: ResourceRecord, b: ResourceRecord) -> bool:
    if a == b:
        return True
    if a.rrtype != RRType.RRSIG or (a.name, a.rrtype, a.ttl) != (b.name, b.rrtype, b.ttl):
        return False
    try:
        return RRSig.from_rdata(a.rdata) == RRSig.from_rdata(b.rdata)
    except (CodecError, ValueError):
        return False


# -- handshake fuzzing ------------------------------------------------------------------------


@dataclass
class Canonical:
    """A recorded honest handshake that fresh sessions replay deterministically."""

    kex: KexMode
    seed: str
    client_msgs: list  # what the client sends, in order
    server_msgs: list  # what the server sends, statement included
    master: bytes


def record_handshake(dep, kex: KexMode, seed: str) -> Canonical:
    client = _client(dep, kex, seed)
    server = _server(dep, kex, seed)
    sent_c, sent_s = [], []
    pending = client.start()
    while pending:
        sent_c += pending
        replies = []
        for m in pending:
            replies += server.receive(m)
        if server.needs_statement:
            req = MlpRequest("server-operator", ("sim-server-0",), server.session_digest)
            stmt = dep.gmlc.service.handle(req).statement
            replies += server.deliver_statement(pack_forwarded(stmt))
        sent_s += replies
        pending = []
        for m in replies:
            pending += client.receive(m)
    if not (client.established and server.established):
        raise RuntimeError("canonical handshake did not complete")
    return Canonical(kex, seed, sent_c, sent_s, client.master)


def _client(dep, kex, seed):
    policy = ClientPolicy()
    legit = dep.topology.legitimate_locations

    def check(payload, session):
        try:
            stmt, proof = unpack_forwarded(payload)
        except CodecError:
            return AlertCode.BAD_LOCATION_STATEMENT
        verdict = verify_statement(stmt, session.session_digest, legit, policy, dep.net.now, dep.keys.gmlc.public, proof)
        return None if verdict.accepted else AlertCode.BAD_LOCATION_STATEMENT

    return ClientSession(
        dep.domain, (dep.keys.ca.public,), kex=kex, require_salve=True,
        statement_handler=check, rng=random.Random(f"{seed}/client"),
    )


def _server(dep, kex, seed):
    return ServerSession(dep.keys.server, dep.certificate, kex=kex, rng=random.Random(f"{seed}/server"))


PERTURBATIONS = ("swap", "drop", "duplicate", "flip", "truncate", "extend", "foreign", "shuffle", "type")


def perturb(msgs: list, foreign: list, rng: random.Random) -> tuple:
    """One random order or content perturbation of ``msgs``; returns (kind, new list)."""
    kind = rng.choice(PERTURBATIONS)
    out = list(msgs)
    i = rng.randrange(len(out))
    if kind == "swap" and len(out) > 1:
        j = rng.choice([k for k in range(len(out)) if k != i])
        out[i], out[j] = out[j], out[i]
    elif kind == "drop":
        del out[i]
    elif kind == "duplicate":
        out.insert(rng.randrange(len(out) + 1), out[i])
    elif kind == "flip":
        m = bytearray(out[i])
        m[rng.randrange(len(m))] ^= rng.randrange(1, 256)
        out[i] = bytes(m)
    elif kind == "truncate":
        out[i] = out[i][: rng.randrange(len(out[i]))]
    elif kind == "extend":
        out[i] = out[i] + rng.randbytes(rng.randrange(1, 8))
    elif kind == "foreign":
        out[i] = rng.choice(foreign)
    elif kind == "shuffle":
        rng.shuffle(out)
    else:
        # rewrite the type byte to another message kind
        m = bytearray(out[i])
        m[0] = rng.choice([1, 2, 11, 12, 16, 20, 21, 90, 255])
        out[i] = bytes(m)
    return kind, out


@dataclass(frozen=True)
class FuzzResult:
    side: str
    kind: str
    phase: Phase
    canonical_input: bool
    master_ok: bool

    @property
    def valid(self) -> bool:
        # established is only allowed for the unmodified message sequence
        if self.phase == Phase.ESTABLISHED:
            return self.canonical_input and self.master_ok
        return True


def fuzz_once(dep, canon: Canonical, foreign: Canonical, rng: random.Random) -> FuzzResult:
    side = rng.choice(("client", "server")) if canon.kex == KexMode.DHE else "server"
    if side == "client":
        session = _client(dep, canon.kex, canon.seed)
        session.start()
        kind, feed = perturb(canon.server_msgs, foreign.server_msgs + foreign.client_msgs, rng)
        canonical = canon.server_msgs
    else:
        session = _server(dep, canon.kex, canon.seed)
        kind, feed = perturb(canon.client_msgs, foreign.client_msgs + foreign.server_msgs, rng)
        canonical = canon.client_msgs
    for m in feed:
        session.receive(m)
    if side == "server" and session.needs_statement:
        session.deliver_statement(b"statement")
    master_ok = session.master == canon.master
    return FuzzResult(side, kind, session.phase, feed == canonical, master_ok)
