from __future__ import annotations

import math
import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from salve.client import ClientPolicy, MatchMode, Reason, RequireSalve, alert_for, verify_statement
from salve.config import ConfigError
from salve.crypto import sha256
from salve.geo import GeoLocation, great_circle_distance, reduce_precision
from salve.gmlc import StatementEntry
from salve.merkle import MerkleProof, merkle_build, merkle_prove
from salve.minitls import AlertCode
from salve.scenario import DEFAULT_TOPOLOGY, Topology, build_deployment

from conftest import FRANKFURT, NOW, ZURICH

DIGEST = sha256(b"k")
OTHER = sha256(b"k'")
L = (ZURICH,)


def check(stmt, digest=DIGEST, legit=L, policy=ClientPolicy(), now=NOW, gmlc=None, proof=None, *, keys):
    return verify_statement(stmt, digest, legit, policy, now, gmlc or keys.gmlc.public, proof).reason


def test_ok_exact_location(make_statement, keys):
    assert check(make_statement(DIGEST), keys=keys) == Reason.OK


def test_relayed_statement_digest_mismatch(make_statement, keys):
    assert check(make_statement(OTHER), keys=keys) == Reason.DIGEST_MISMATCH


def test_own_sim_location_mismatch(make_statement, keys):
    stmt = make_statement(DIGEST, [StatementEntry("sim-adversary", FRANKFURT, NOW)])
    assert check(stmt, keys=keys) == Reason.LOCATION_MISMATCH


def test_freshness_boundary(make_statement, keys):
    threshold = ClientPolicy().freshness_threshold
    stmt = make_statement(DIGEST, t=NOW)
    assert check(stmt, now=NOW + threshold, keys=keys) == Reason.OK
    assert check(stmt, now=NOW + threshold + 1, keys=keys) == Reason.STALE


def test_bad_signature_and_malformed_bytes(make_statement, keys):
    stmt = make_statement(DIGEST, identity=keys.adversary)
    assert check(stmt, keys=keys) == Reason.BAD_SIGNATURE
    assert check(b"\x00\x01garbage", keys=keys) == Reason.BAD_SIGNATURE
    assert check(make_statement(DIGEST).to_bytes(), keys=keys) == Reason.OK
    assert check(make_statement(DIGEST), gmlc=b"not a key", keys=keys) == Reason.BAD_SIGNATURE


def test_merkle_proof_ok_and_every_corruption_rejected(make_statement, keys):
    leaves = [DIGEST, OTHER, sha256(b"3"), sha256(b"4")]
    tree = merkle_build(leaves)
    stmt = make_statement(tree.root)
    proof = merkle_prove(tree, 0)
    assert check(stmt, proof=proof, keys=keys) == Reason.OK
    wire = proof.to_bytes()
    for pos in range(len(wire)):
        for mask in (0x01, 0x80):
            bad = bytearray(wire)
            bad[pos] ^= mask
            try:
                corrupted = MerkleProof.from_bytes(bytes(bad))
            except ValueError:
                continue
            assert check(stmt, proof=corrupted, keys=keys) == Reason.MERKLE_PROOF_INVALID, pos
    # a proof for another leaf does not bind this session
    assert check(stmt, proof=merkle_prove(tree, 1), keys=keys) == Reason.MERKLE_PROOF_INVALID


def test_every_reason_has_a_vector(make_statement, keys):
    vectors = {
        Reason.OK: make_statement(DIGEST),
        Reason.BAD_SIGNATURE: make_statement(DIGEST, identity=keys.adversary),
        Reason.DIGEST_MISMATCH: make_statement(OTHER),
        Reason.LOCATION_MISMATCH: make_statement(DIGEST, [StatementEntry("s", FRANKFURT, NOW)]),
        Reason.STALE: make_statement(DIGEST, t=NOW - 10_000),
    }
    for reason, stmt in vectors.items():
        assert check(stmt, keys=keys) == reason
    for reason in Reason:
        assert (alert_for(reason) is None) == (reason == Reason.OK)
    assert alert_for(Reason.DOWNGRADE) == AlertCode.DOWNGRADE_DETECTED


def test_check_order_is_stable(make_statement, keys):
    # each stage fails along with everything after it; the earliest wins
    far_old = [StatementEntry("s", FRANKFURT, NOW - 10_000)]
    assert check(make_statement(OTHER, far_old, identity=keys.adversary), keys=keys) == Reason.BAD_SIGNATURE
    assert check(make_statement(OTHER, far_old), keys=keys) == Reason.DIGEST_MISMATCH
    assert check(make_statement(DIGEST, far_old), keys=keys) == Reason.LOCATION_MISMATCH
    stale_here = [StatementEntry("s", ZURICH, NOW - 10_000)]
    assert check(make_statement(DIGEST, stale_here), keys=keys) == Reason.STALE


def test_any_of_l_and_all_of_l(make_statement, keys):
    dc2 = GeoLocation(47.5, 8.7)
    both = (ZURICH, dc2)
    one_site = make_statement(DIGEST, [StatementEntry("s0", ZURICH, NOW)])
    all_sites = make_statement(DIGEST, [StatementEntry("s0", ZURICH, NOW), StatementEntry("s1", dc2, NOW)])
    strict = ClientPolicy(match_mode=MatchMode.ALL_OF_L)
    assert check(one_site, legit=both, keys=keys) == Reason.OK
    assert check(one_site, legit=both, policy=strict, keys=keys) == Reason.LOCATION_MISMATCH
    assert check(all_sites, legit=both, policy=strict, keys=keys) == Reason.OK
    # a co-located attacker SIM elsewhere is caught only in all-of-L mode
    with_attacker = make_statement(
        DIGEST, [StatementEntry("s0", ZURICH, NOW), StatementEntry("s1", dc2, NOW), StatementEntry("x", FRANKFURT, NOW)]
    )
    assert check(with_attacker, legit=both, keys=keys) == Reason.OK
    assert check(with_attacker, legit=both, policy=strict, keys=keys) == Reason.LOCATION_MISMATCH


def test_exact_match_threshold_zero(make_statement, keys):
    exact = ClientPolicy(distance_threshold=0)
    assert check(make_statement(DIGEST), policy=exact, keys=keys) == Reason.OK
    near = make_statement(DIGEST, [StatementEntry("s", GeoLocation(47.3770, 8.5417), NOW)])
    assert check(near, policy=exact, keys=keys) == Reason.LOCATION_MISMATCH
    assert check(near, keys=keys) == Reason.OK


def test_freshness_only_counts_matched_entries(make_statement, keys):
    stmt = make_statement(DIGEST, [StatementEntry("a", ZURICH, NOW), StatementEntry("b", FRANKFURT, NOW - 10_000)])
    assert check(stmt, keys=keys) == Reason.OK


def test_threshold_monotonicity(make_statement, keys):
    rng = random.Random(4)
    for _ in range(40):
        site = GeoLocation(ZURICH.latitude + rng.uniform(-0.01, 0.01), ZURICH.longitude + rng.uniform(-0.01, 0.01))
        stmt = make_statement(DIGEST, [StatementEntry("s", site, NOW)])
        verdicts = [
            check(stmt, policy=ClientPolicy(distance_threshold=d), keys=keys) == Reason.OK
            for d in (0, 50, 100, 250, 500, 1000, 2000)
        ]
        # once accepted, every larger threshold accepts
        assert verdicts == sorted(verdicts)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-60, 60), st.floats(-170, 170),
    st.floats(-0.02, 0.02), st.floats(-0.02, 0.02),
    st.sampled_from([50.0, 200.0, 1000.0]),
)
def test_coarse_grid_preserves_acceptance(make_statement, keys, lat, lon, dlat, dlon, r):
    legit = GeoLocation(lat, lon)
    here = GeoLocation(lat + dlat, lon + dlon)
    d = 3000.0
    margin = d - great_circle_distance(here, legit)
    assume(margin > r * math.sqrt(2))
    policy = ClientPolicy(distance_threshold=d)
    stmt = make_statement(DIGEST, [StatementEntry("s", here, NOW)])
    assert check(stmt, legit=(legit,), policy=policy, keys=keys) == Reason.OK
    coarse = make_statement(DIGEST, [StatementEntry("s", reduce_precision(here, r), NOW)])
    assert check(coarse, legit=(reduce_precision(legit, r),), policy=policy, keys=keys) == Reason.OK


def test_policy_validation_and_parsing(tmp_path):
    with pytest.raises(ValueError):
        ClientPolicy(freshness_threshold=0)
    with pytest.raises(ValueError):
        ClientPolicy(distance_threshold=-1)
    p = ClientPolicy.parse("freshness_threshold = 60\ndistance-threshold = 500\nrequire-salve = always\nmatch-mode = all-of-L\n")
    assert p == ClientPolicy(60, 500, RequireSalve.ALWAYS, MatchMode.ALL_OF_L)
    with pytest.raises(ConfigError):
        ClientPolicy.parse("require-salve = sometimes")
    path = tmp_path / "policy.conf"
    path.write_text("distance-threshold = 10\n")
    assert ClientPolicy.load(path).distance_threshold == 10


def test_salve_required_matrix():
    assert ClientPolicy(require_salve="always").salve_required(False)
    assert not ClientPolicy(require_salve="never").salve_required(True)
    assert ClientPolicy().salve_required(True) and not ClientPolicy().salve_required(False)


# -- end to end over the simulated network --


def test_connect_honest(deployment):
    result = deployment.client().connect_sync(deployment.domain)
    assert result.accepted and result.salve_verified
    assert result.as_dict()["reason"] == "ok"
    assert result.records.ladns_extra_bytes == 378


def test_connect_two_datacenters_server_at_one():
    topo = Topology.parse(DEFAULT_TOPOLOGY + "datacenter = 46.2044, 6.1432\n")
    dep = build_deployment(topo)
    result = dep.client().connect_sync(dep.domain)
    assert result.accepted and len(result.records.locations) == 2


def test_connect_downgrade_when_flag_set():
    dep = build_deployment(salve_enabled=False, slvreq=True)
    assert dep.client().connect_sync(dep.domain).reason == "downgrade"


def test_connect_without_flag_accepts_plain():
    dep = build_deployment(salve_enabled=False, slvreq=False)
    result = dep.client().connect_sync(dep.domain)
    assert result.accepted and not result.salve_verified


def test_connect_require_always_rejects_plain():
    dep = build_deployment(salve_enabled=False, slvreq=False)
    assert dep.client(ClientPolicy(require_salve="always")).connect_sync(dep.domain).reason == "downgrade"


def test_connect_unknown_domain(deployment):
    assert deployment.client().connect_sync("nowhere.example.com").reason == "nxdomain"


def test_connect_refused(deployment):
    deployment.net.unregister(deployment.address("server"))
    assert deployment.client().connect_sync(deployment.domain).reason == "connection-refused"
