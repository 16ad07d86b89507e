from __future__ import annotations

import random

import pytest

from salve.client import ClientPolicy
from salve.geo import GeoLocation
from salve.gmlc import SimRecord, SimRegistry, StatementEntry, sign_statement
from salve.scenario import Keys, Topology, build_deployment

ZURICH = GeoLocation(47.3769, 8.5417)
FRANKFURT = GeoLocation(50.1109, 8.6821)
NOW = 1_700_000_000


@pytest.fixture(scope="session")
def keys():
    return Keys.from_seed(0)


@pytest.fixture(scope="session")
def topology():
    return Topology.default()


@pytest.fixture
def deployment(topology):
    return build_deployment(topology)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def policy():
    return ClientPolicy()


@pytest.fixture(scope="session")
def make_statement(keys):
    """Statement factory signed by the test GMLC key."""

    def make(digest: bytes, entries=None, *, t: int = NOW, identity=None):
        if entries is None:
            entries = [StatementEntry("sim-server-0", ZURICH, t)]
        return sign_statement(identity or keys.gmlc, digest, entries)

    return make


@pytest.fixture
def registry():
    return SimRegistry(
        [
            SimRecord("sim-a", "cred-a", ZURICH, NOW),
            SimRecord("sim-b", "cred-a", GeoLocation(47.38, 8.55), NOW),
            SimRecord("sim-c", "cred-a", GeoLocation(47.39, 8.56), NOW),
            SimRecord("sim-x", "cred-x", FRANKFURT, NOW),
        ]
    )
