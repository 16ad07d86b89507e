"""
One honest connection, step by step
===================================

A client in the default topology resolves example.com, checks the
DNSSEC chain, and then runs the location-aware handshake against the Zurich
server.
"""

# %%
# The deployment wires a DNS tree, a GMLC, and a web server onto one
# simulated network. Everything is seeded, so reruns print the same bytes.
from salve import build_deployment, verify_statement, ClientPolicy
from salve.gmlc import MlpRequest, statement_xml

dep = build_deployment(seed=0)
print("domain      :", dep.domain)
print("server site :", dep.topology.server_location)
print("adversary   :", dep.topology.adversary_location)

# %%
# laDNS: the A record, the LOC set and the SLVREQ flag, all validated
# from the trust anchor down.
records = dep.resolver().ladns_lookup(dep.domain)
print("address     :", records.ip_text)
print("locations   :", records.locations)
print("flag set    :", records.salve_required)
print("extra bytes :", records.ladns_extra_bytes)
for apex, _ in records.chain:
    print("  validated zone", apex)

# %%
# The full connection. The server asks the GMLC for a statement over the
# session digest once Finished checks out, and forwards it sealed.
result = dep.client().connect_sync(dep.domain)
print(result.as_dict())
print("gmlc requests so far:", dep.server.gmlc_requests)

# %%
# What such a statement looks like on the MLP wire, and how the client
# judges it. A statement for some other session fails on the digest check.
digest = result.session.session_digest
stmt = dep.gmlc.service.handle(MlpRequest("server-operator", ("sim-server-0",), digest)).statement
print(statement_xml(stmt).decode())
print(len(statement_xml(stmt)), "bytes")

legit = dep.topology.legitimate_locations
pub = dep.keys.gmlc.public
print(verify_statement(stmt, digest, legit, ClientPolicy(), dep.net.now, pub).reason.value)
print(verify_statement(stmt, bytes(32), legit, ClientPolicy(), dep.net.now, pub).reason.value)
