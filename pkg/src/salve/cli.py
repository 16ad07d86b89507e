"""Command-line entry points (``python -m salve <command>``).

Every command except ``gmlc --listen`` runs inside the deterministic
simulator; addresses in the files are labels on the simulated network.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .attacks import AttackKind, AttackScenario, run_attack
from .bench import MODES, run_bench
from .client import ClientPolicy
from .config import ConfigError, as_bool, one
from .crypto import SigningIdentity
from .dnssim import format_zone_text, write_signed_tree
from .errors import SalveError
from .gmlc import GmlcService, SimRegistry
from .minitls import KexMode
from .scenario import Keys, Topology, build_deployment, build_zone_tree
from .server import events_to_csv, load_server_config


def _topology(path: Optional[str]) -> Topology:
    return Topology.load(path) if path else Topology.default()


def _kex(name: str) -> KexMode:
    return KexMode[name.upper().replace("-", "_")]


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- commands ---------------------------------------------------------------------------------


def cmd_zone_gen(args) -> int:
    topo = _topology(args.topology)
    keys = Keys.from_seed(args.seed)
    root = build_zone_tree(
        topo.domain, topo.address("server"), topo.legitimate_locations, keys, slvreq=not args.no_slvreq
    )
    out = Path(args.out)
    written = write_signed_tree(root, out)
    for zone in root.walk():
        name = "root" if zone.apex == "." else zone.apex.rstrip(".")
        (out / f"{name}.zone").write_text(format_zone_text(zone.records))
    _emit({"zones": [p.name for p in written], "trust_anchor": (out / "trust-anchor.hex").read_text().strip()})
    return 0


def _gmlc_service(args) -> GmlcService:
    registry = SimRegistry.load(args.registry)
    return GmlcService(registry, SigningIdentity.generate(args.key_seed))


def cmd_gmlc(args) -> int:
    service = _gmlc_service(args)
    if not args.listen:
        sys.stdout.buffer.write(service.handle_xml(sys.stdin.buffer.read()) + b"\n")
        return 0
    host, _, port = args.listen.rpartition(":")

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            # one MLP document per connection, terminated by EOF or a blank line
            lines = []
            for line in self.rfile:
                if not line.strip():
                    break
                lines.append(line)
            self.wfile.write(service.handle_xml(b"".join(lines)) + b"\n")

    with socketserver.ThreadingTCPServer((host or "127.0.0.1", int(port)), Handler) as srv:
        print(f"gmlc listening on {srv.server_address[0]}:{srv.server_address[1]}", file=sys.stderr)
        srv.serve_forever()
    return 0


def cmd_serve(args) -> int:
    config, raw = load_server_config(args.config)
    topo = _topology(one(raw, "topology", "") or None)
    if config.domain.rstrip(".").lower() != topo.domain.rstrip(".").lower():
        raise ConfigError(f"config domain {config.domain} is not the topology's {topo.domain}")
    if config.gmlc_address == "gmlc":
        config = replace(config, gmlc_address=topo.address("gmlc"))
    registry = SimRegistry.load(one(raw, "registry")) if raw.get("registry") else None
    dep = build_deployment(
        topo,
        seed=int(one(raw, "seed", "0")),
        kex=config.kex,
        server_config=config,
        registry=registry,
        slvreq=as_bool(one(raw, "slvreq", "true")) and config.salve_enabled,
    )
    policy_path = one(raw, "policy", "")
    policy = ClientPolicy.load(policy_path) if policy_path else ClientPolicy()
    n = int(one(raw, "connections", "10"))
    # all connections start together so that batching has something to batch
    attempts = [dep.client(policy).connect(dep.domain) for _ in range(n)]
    dep.net.run()
    results = [a.result for a in attempts]
    log = events_to_csv(dep.server.events)
    target = one(raw, "event-log", "")
    if target:
        Path(target).write_text(log)
    else:
        sys.stdout.write(log)
    ok = sum(r.accepted for r in results)
    print(
        json.dumps({"connections": n, "accepted": ok, "gmlc_requests": dep.server.gmlc_requests,
                    "gmlc_channel_opens": dep.server.channel.opens}),
        file=sys.stderr,
    )
    return 0 if ok == n else 1


def cmd_connect(args) -> int:
    topo = _topology(args.topology)
    policy = ClientPolicy.load(args.policy) if args.policy else ClientPolicy()
    dep = build_deployment(topo, seed=args.seed, kex=_kex(args.kex))
    result = dep.client(policy).connect_sync(args.domain)
    _emit(result.as_dict())
    return 0 if result.accepted else 1


def cmd_attack(args) -> int:
    topo = _topology(args.topology)
    policy = ClientPolicy.load(args.policy) if args.policy else ClientPolicy()
    scenario = AttackScenario(AttackKind(args.scenario), _kex(args.kex), policy=policy, seed=args.seed)
    outcome = run_attack(scenario, topo)
    expected, reason = scenario.expected_outcome()
    record = outcome.as_dict()
    record.update(expected=expected, expected_reason=reason, observed_expected=outcome.matches(scenario))
    if outcome.detail:
        record["detail"] = outcome.detail
    _emit(record)
    return 0 if outcome.matches(scenario) else 1


def cmd_bench(args) -> int:
    modes = [m.strip() for m in args.mode.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
    levels = [int(c) for c in args.concurrency.split(",") if c.strip()]
    report = run_bench(
        modes,
        levels,
        topology=_topology(args.topology),
        handshakes=args.handshakes,
        duration=args.duration,
        gmlc_latency_ms=args.gmlc_latency_ms,
        seed=args.seed,
    )
    if args.out:
        report.write_csv(args.out)
    else:
        sys.stdout.write(report.to_csv())
    return 0


# -- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salve", description="Location-based server authentication, simulated.")
    sub = p.add_subparsers(dest="command", required=True)

    z = sub.add_parser("zone-gen", help="write a signed DNS tree for a topology")
    z.add_argument("--out", required=True, help="output directory")
    z.add_argument("--topology")
    z.add_argument("--seed", type=int, default=0)
    z.add_argument("--no-slvreq", action="store_true", help="publish SLVREQ=0")
    z.set_defaults(func=cmd_zone_gen)

    g = sub.add_parser("gmlc", help="answer MLP requests from stdin, or over TCP with --listen")
    g.add_argument("--registry", required=True)
    g.add_argument("--listen", help="host:port")
    g.add_argument("--key-seed", type=int, default=6, help="seed of the GMLC signing key")
    g.set_defaults(func=cmd_gmlc)

    s = sub.add_parser("serve", help="run a server from a config file against simulated clients")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_serve)

    c = sub.add_parser("connect", help="resolve and connect to a domain; prints one JSON line")
    c.add_argument("--domain", required=True)
    c.add_argument("--policy")
    c.add_argument("--topology")
    c.add_argument("--kex", default="dhe", choices=["dhe", "static-rsa"])
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_connect)

    a = sub.add_parser("attack", help="run an adversary scenario; exit 0 when the expected outcome occurs")
    a.add_argument("--scenario", required=True, choices=[k.value for k in AttackKind])
    a.add_argument("--topology")
    a.add_argument("--policy")
    a.add_argument("--kex", default="dhe", choices=["dhe", "static-rsa"])
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_attack)

    b = sub.add_parser("bench", help="closed-loop handshake benchmark, CSV output")
    b.add_argument("--mode", default="plain,salve", help=f"comma list of {', '.join(MODES)}")
    b.add_argument("--concurrency", default="1")
    b.add_argument("--duration", type=float, help="virtual seconds per configuration")
    b.add_argument("--handshakes", type=int, default=2000)
    b.add_argument("--gmlc-latency-ms", type=float)
    b.add_argument("--topology")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SalveError, OSError, ValueError) as exc:
        print(f"salve: {exc}", file=sys.stderr)
        return 2
