"""Location-based server authentication over a simulated network.

The client learns the legitimate server locations from DNSSEC-validated LOC
records, and during the handshake the server forwards a statement, signed
by the mobile operator's GMLC, that binds its SIM's location to the hash of
the session's master secret.
"""

from .attacks import AttackKind, AttackOutcome, AttackScenario, run_attack, soundness_sweep
from .bench import BenchReport, calibrate, run_bench
from .client import ClientPolicy, MatchMode, Reason, RequireSalve, SalveClient, VerificationVerdict, verify_statement
from .crypto import SigningIdentity, derive_master_secret, session_digest, sha256
from .dnssim import Resolver, ValidatedRecordSet, ladns_lookup, resolve, sign_zone, trust_anchor
from .errors import (
    CodecError,
    DnsError,
    HandshakeError,
    NXDomain,
    SalveError,
    ScenarioError,
    TrustError,
    ValidationError,
)
from .geo import GeoLocation, decode_loc, encode_loc, great_circle_distance, reduce_precision
from .gmlc import GmlcService, LocationStatement, MlpRequest, MlpResponse, SimRegistry, issue_statement
from .merkle import MerkleProof, merkle_build, merkle_prove, merkle_root, merkle_verify
from .minitls import AlertCode, ClientSession, KexMode, ServerSession, finished_mac
from .netsim import CostModel, SimNetwork
from .scenario import Deployment, Topology, build_deployment
from .server import MerkleBatching, SalveServer, ServerConfig, merkle_batch

__version__ = "0.1.0"

__all__ = [
    "AlertCode",
    "AttackKind",
    "AttackOutcome",
    "AttackScenario",
    "BenchReport",
    "ClientPolicy",
    "ClientSession",
    "CodecError",
    "CostModel",
    "Deployment",
    "DnsError",
    "GeoLocation",
    "GmlcService",
    "HandshakeError",
    "KexMode",
    "LocationStatement",
    "MatchMode",
    "MerkleBatching",
    "MerkleProof",
    "MlpRequest",
    "MlpResponse",
    "NXDomain",
    "Reason",
    "RequireSalve",
    "Resolver",
    "SalveClient",
    "SalveError",
    "SalveServer",
    "ScenarioError",
    "ServerConfig",
    "ServerSession",
    "SigningIdentity",
    "SimNetwork",
    "SimRegistry",
    "Topology",
    "TrustError",
    "ValidatedRecordSet",
    "ValidationError",
    "VerificationVerdict",
    "build_deployment",
    "calibrate",
    "decode_loc",
    "derive_master_secret",
    "encode_loc",
    "finished_mac",
    "great_circle_distance",
    "issue_statement",
    "ladns_lookup",
    "merkle_batch",
    "merkle_build",
    "merkle_prove",
    "merkle_root",
    "merkle_verify",
    "reduce_precision",
    "resolve",
    "run_attack",
    "run_bench",
    "session_digest",
    "sha256",
    "sign_zone",
    "soundness_sweep",
    "trust_anchor",
    "verify_statement",
]
