from __future__ import annotations

import pytest

from salve.attacks import (
    ATTACK_KINDS,
    CLIENT_ACCEPTED,
    CLIENT_REJECTED,
    EXPECTED_REASON,
    HIJACK_FAILED,
    HIJACK_SUCCEEDED,
    SETUP_ERROR,
    AttackKind,
    AttackOutcome,
    AttackScenario,
    run_attack,
    soundness_sweep,
)
from salve.client import ClientPolicy
from salve.minitls import KexMode
from salve.scenario import DEFAULT_TOPOLOGY, Topology, build_deployment

KEX = [KexMode.DHE, KexMode.STATIC_RSA]


@pytest.mark.parametrize("kex", KEX)
@pytest.mark.parametrize("kind", sorted(EXPECTED_REASON, key=lambda k: k.value))
def test_active_attack_rejected_with_exact_reason(kind, kex):
    out = run_attack(AttackScenario(kind, kex))
    assert out.outcome == CLIENT_REJECTED
    assert out.reason == EXPECTED_REASON[kind]
    assert not out.breach


def test_passive_hijack_depends_on_key_exchange():
    rsa = run_attack(AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.STATIC_RSA))
    dhe = run_attack(AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.DHE))
    assert rsa.outcome == HIJACK_SUCCEEDED and rsa.breach
    assert dhe.outcome == HIJACK_FAILED and not dhe.breach


@pytest.mark.parametrize("kex", KEX)
def test_honest_scenario_accepts(kex):
    out = run_attack(AttackScenario(AttackKind.HONEST, kex))
    assert out.outcome == CLIENT_ACCEPTED and out.reason == "ok"


def test_every_scenario_matches_its_expectation():
    for kex in KEX:
        for kind in AttackKind:
            scenario = AttackScenario(kind, kex)
            assert run_attack(scenario).matches(scenario), scenario


def test_sweep_is_sound():
    sweep = soundness_sweep()
    assert sweep.sound
    assert len(sweep.outcomes) == 2 * len(AttackKind)
    assert [(o.kind, o.kex) for o in sweep.breaches] == [(AttackKind.PASSIVE_RSA_HIJACK, KexMode.STATIC_RSA)]


def test_sweep_would_flag_an_unexpected_breach():
    sweep = soundness_sweep(kex_modes=(KexMode.DHE,))
    sweep.outcomes.append(AttackOutcome(AttackKind.RELAY_STATEMENT, KexMode.DHE, CLIENT_ACCEPTED, "ok"))
    assert not sweep.sound


def test_missing_tap_is_a_setup_error():
    topo = Topology.parse(DEFAULT_TOPOLOGY.replace("tap = client server\n", ""))
    out = run_attack(AttackScenario(AttackKind.RELAY_STATEMENT), topo)
    assert out.outcome == SETUP_ERROR and "tap" in out.detail


def test_adversary_inside_radius_is_a_setup_error():
    topo = Topology.parse(DEFAULT_TOPOLOGY.replace("50.1109, 8.6821", "47.3770, 8.5418"))
    out = run_attack(AttackScenario(AttackKind.OWN_SIM_STATEMENT), topo)
    assert out.outcome == SETUP_ERROR


@pytest.mark.parametrize(
    "scenario",
    [
        AttackScenario(AttackKind.PASSIVE_RSA_HIJACK, KexMode.STATIC_RSA, stolen_server_key=False),
        AttackScenario(AttackKind.RELAY_STATEMENT, stolen_server_key=False, certified_key=False),
        AttackScenario(AttackKind.OWN_SIM_STATEMENT, own_sim=False),
    ],
)
def test_missing_assets_are_setup_errors(scenario):
    assert run_attack(scenario).outcome == SETUP_ERROR


def test_attack_kinds_exclude_honest():
    assert AttackKind.HONEST not in ATTACK_KINDS
    assert set(ATTACK_KINDS) == set(EXPECTED_REASON) | {AttackKind.PASSIVE_RSA_HIJACK}


def test_outcome_dict():
    out = run_attack(AttackScenario(AttackKind.DNS_TAMPER))
    assert out.as_dict() == {
        "scenario": "dns-tamper", "kex": "dhe", "outcome": CLIENT_REJECTED,
        "reason": "validation-error", "breach": False,
    }


def test_stricter_freshness_still_catches_replay():
    policy = ClientPolicy(freshness_threshold=30)
    out = run_attack(AttackScenario(AttackKind.STALE_REPLAY, policy=policy))
    assert out.reason == "stale"


def test_honest_completeness_over_many_runs():
    # fresh client randomness per run on one shared deployment
    dep = build_deployment(seed=3)
    failures = [r.reason for r in (dep.client().connect_sync(dep.domain) for _ in range(1000)) if not r.accepted]
    assert failures == []
