"""Topologies and fully wired simulated deployments.

A deployment is one signed DNS tree (root, TLD, the server's zone), a GMLC
with a SIM registry, a SALVE server, and factory methods for clients, all
on one :class:`~salve.netsim.SimNetwork`. Keys come from fixed seeds, so a
deployment built twice with the same arguments is byte-for-byte identical.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .client import ClientPolicy, SalveClient
from .config import ConfigError, as_list, one, parse_kv
from .crypto import SigningIdentity
from .dnssim import Interceptor, Resolver, Zone, a_record, loc_record, sign_zone, slvreq_record, trust_anchor
from .geo import GeoLocation, great_circle_distance
from .gmlc import GmlcService, SimRecord, SimRegistry
from .minitls import Certificate, KexMode, issue_certificate
from .netsim import CostModel, SimNetwork
from .server import GmlcEndpoint, MerkleBatching, SalveServer, ServerConfig

ROLES = ("client", "server", "gmlc", "adversary")

DEFAULT_TOPOLOGY = """\
# Zurich web server, Frankfurt adversary
domain = example.com
client = 192.0.2.1
server = 203.0.113.10 @ 47.3769, 8.5417
gmlc = 198.51.100.5
adversary = 198.51.100.66 @ 50.1109, 8.6821
link = client server 10
link = server gmlc 15
link = client adversary 2
link = adversary server 10
link = adversary gmlc 15
tap = client server
"""


@dataclass(frozen=True)
class Topology:
    domain: str
    addresses: dict
    server_location: GeoLocation
    adversary_location: GeoLocation
    datacenters: tuple = ()  # further legitimate server sites
    links: tuple = ()  # (role, role, one-way ms)
    taps: tuple = ()  # role pairs the adversary can interpose on

    def address(self, role: str) -> str:
        return self.addresses[role]

    @property
    def legitimate_locations(self) -> tuple:
        return (self.server_location,) + tuple(self.datacenters)

    def has_tap(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in {frozenset(t) for t in self.taps}

    def adversary_is_remote(self, threshold_m: float) -> bool:
        return all(
            great_circle_distance(self.adversary_location, g) > threshold_m for g in self.legitimate_locations
        )

    def latency_ms(self, a: str, b: str) -> float:
        for x, y, ms in self.links:
            if {x, y} == {a, b}:
                return ms
        return 0.0

    def with_latency(self, a: str, b: str, ms: float) -> "Topology":
        links = tuple(l for l in self.links if {l[0], l[1]} != {a, b}) + ((a, b, float(ms)),)
        return Topology(
            self.domain, self.addresses, self.server_location, self.adversary_location, self.datacenters, links, self.taps
        )

    @classmethod
    def parse(cls, text: str) -> "Topology":
        cfg = parse_kv(text)
        addresses, locations = {}, {}
        for role in ROLES:
            value = one(cfg, role)
            addr, _, loc = value.partition("@")
            addresses[role] = addr.strip()
            if loc.strip():
                locations[role] = _parse_point(loc)
        for role in ("server", "adversary"):
            if role not in locations:
                raise ConfigError(f"{role} needs a location: '{role} = <address> @ <lat>, <lon>'")
        links = []
        for value in cfg.get("link", []):
            parts = value.split()
            if len(parts) != 3 or parts[0] not in ROLES or parts[1] not in ROLES:
                raise ConfigError(f"bad link {value!r}; expected '<role> <role> <one-way ms>'")
            links.append((parts[0], parts[1], float(parts[2])))
        taps = []
        for value in cfg.get("tap", []):
            parts = value.split()
            if len(parts) != 2 or parts[0] not in ROLES or parts[1] not in ROLES:
                raise ConfigError(f"bad tap {value!r}; expected '<role> <role>'")
            taps.append((parts[0], parts[1]))
        return cls(
            domain=one(cfg, "domain"),
            addresses=addresses,
            server_location=locations["server"],
            adversary_location=locations["adversary"],
            datacenters=tuple(_parse_point(v) for v in cfg.get("datacenter", [])),
            links=tuple(links),
            taps=tuple(taps),
        )

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.parse(Path(path).read_text())

    @classmethod
    def default(cls) -> "Topology":
        return cls.parse(DEFAULT_TOPOLOGY)


def _parse_point(text: str) -> GeoLocation:
    parts = as_list(text)
    if len(parts) != 2:
        raise ConfigError(f"expected '<lat>, <lon>', got {text!r}")
    return GeoLocation(float(parts[0]), float(parts[1]))


@dataclass(frozen=True)
class Keys:
    root: SigningIdentity
    tld: SigningIdentity
    zone: SigningIdentity
    ca: SigningIdentity
    server: SigningIdentity
    gmlc: SigningIdentity
    adversary: SigningIdentity

    @classmethod
    def from_seed(cls, seed: int) -> "Keys":
        base = 1000 * seed
        names = ("root", "tld", "zone", "ca", "server", "gmlc", "adversary")
        return cls(**{n: SigningIdentity.generate(base + i) for i, n in enumerate(names, 1)})


SERVER_CREDENTIAL = "server-operator"
ADVERSARY_CREDENTIAL = "adversary-subscriber"
ADVERSARY_SIM = "sim-adversary"


def server_sim_ids(topology: Topology) -> tuple:
    return tuple(f"sim-server-{i}" for i in range(len(topology.legitimate_locations)))


def build_zone_tree(domain: str, server_ip: str, locations, keys: Keys, *, slvreq: bool = True) -> Zone:
    """Signed root -> TLD -> ``domain`` tree publishing A, LOC and SLVREQ records."""
    records = [a_record(domain, server_ip)]
    records += [loc_record(domain, g) for g in locations]
    records.append(slvreq_record(domain, slvreq))
    leaf = Zone(domain, records, keys.zone)
    labels = domain.rstrip(".").split(".")
    if len(labels) > 1:
        tld = Zone(labels[-1], (), keys.tld, (leaf,))
        root = Zone(".", (), keys.root, (tld,))
    else:
        root = Zone(".", (), keys.root, (leaf,))
    return sign_zone(root)


@dataclass
class Deployment:
    topology: Topology
    net: SimNetwork
    keys: Keys
    root_zone: Zone
    anchor: bytes
    registry: SimRegistry
    gmlc: GmlcEndpoint
    server: SalveServer
    certificate: Certificate
    adversary_certificate: Certificate
    kex: KexMode
    costs: CostModel
    seed: int
    _clients: int = field(default=0, repr=False)

    @property
    def domain(self) -> str:
        return self.topology.domain

    def address(self, role: str) -> str:
        return self.topology.address(role)

    def resolver(self, interceptor: Optional[Interceptor] = None) -> Resolver:
        return Resolver(self.root_zone, self.anchor, clock=self.net.clock, interceptor=interceptor)

    def client(
        self,
        policy: ClientPolicy = ClientPolicy(),
        *,
        role: str = "client",
        kex: Optional[KexMode] = None,
        interceptor: Optional[Interceptor] = None,
        resolver: Optional[Resolver] = None,
    ) -> SalveClient:
        self._clients += 1
        return SalveClient(
            self.net,
            self.address(role),
            resolver=resolver or self.resolver(interceptor),
            gmlc_public=self.keys.gmlc.public,
            trusted_cas=(self.keys.ca.public,),
            policy=policy,
            kex=self.kex if kex is None else kex,
            costs=self.costs,
            rng=random.Random(f"client/{self.seed}/{self._clients}"),
        )


def build_deployment(
    topology: Optional[Topology] = None,
    *,
    seed: int = 0,
    kex: KexMode = KexMode.DHE,
    salve_enabled: bool = True,
    batching: Optional[MerkleBatching] = None,
    multi_sim: bool = False,
    slvreq: bool = True,
    costs: CostModel = CostModel(),
    server_cores: int = 1,
    relocalize: bool = True,
    server_config: Optional[ServerConfig] = None,
    registry: Optional[SimRegistry] = None,
) -> Deployment:
    """Wire a deployment; ``server_config`` and ``registry`` replace the generated ones."""
    topology = topology or Topology.default()
    keys = Keys.from_seed(seed)
    net = SimNetwork()
    for a, b, ms in topology.links:
        net.set_latency(topology.address(a), topology.address(b), ms)

    server_ip = topology.address("server")
    # a deployment without SALVE publishes a legacy zone: no LOC, no flag
    published = topology.legitimate_locations if (salve_enabled or slvreq) else ()
    root = build_zone_tree(topology.domain, server_ip, published, keys, slvreq=slvreq)

    now = int(net.now)
    sims = server_sim_ids(topology)
    if registry is None:
        registry = SimRegistry(
            [SimRecord(s, SERVER_CREDENTIAL, g, now) for s, g in zip(sims, topology.legitimate_locations)]
            + [SimRecord(ADVERSARY_SIM, ADVERSARY_CREDENTIAL, topology.adversary_location, now)]
        )
    service = GmlcService(registry, keys.gmlc, clock=net.clock if relocalize else None)
    gmlc = GmlcEndpoint(net, topology.address("gmlc"), service, costs)

    certificate = issue_certificate(keys.ca, topology.domain, keys.server.public)
    config = server_config or ServerConfig(
        domain=topology.domain,
        sim_ids=sims,
        gmlc_credential=SERVER_CREDENTIAL,
        gmlc_address=topology.address("gmlc"),
        batching=batching,
        multi_sim=multi_sim,
        salve_enabled=salve_enabled,
        kex=kex,
    )
    server = SalveServer(
        net, server_ip, config, keys.server, certificate, costs=costs, cores=server_cores, rng=random.Random(f"server/{seed}")
    )
    return Deployment(
        topology=topology,
        net=net,
        keys=keys,
        root_zone=root,
        anchor=trust_anchor(root),
        registry=registry,
        gmlc=gmlc,
        server=server,
        certificate=certificate,
        # a certificate for the victim domain mis-issued to the adversary
        adversary_certificate=issue_certificate(keys.ca, topology.domain, keys.adversary.public),
        kex=kex,
        costs=costs,
        seed=seed,
    )
