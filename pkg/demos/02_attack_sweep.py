"""
What the adversary can and cannot do
====================================

Every adversary scenario runs on a fresh deployment under both key
exchanges. The adversary sits in Frankfurt with a certified key for the
victim domain, a SIM of its own, and a tap on the client link.
"""

# %%
from salve import KexMode, soundness_sweep
from salve.attacks import AttackKind, AttackScenario, run_attack

sweep = soundness_sweep()
print(f"{'scenario':24} {'kex':11} {'outcome':18} reason")
for o in sweep.outcomes:
    print(f"{o.kind.value:24} {o.kex.name.lower():11} {o.outcome:18} {o.reason or '-'}")

# %%
# The only breach is the passive hijack against static-RSA key transport:
# with the server's long-term key, a recording of the handshake is enough to
# read the traffic. Ephemeral DH closes that hole.
print("breaches:", [(o.kind.value, o.kex.name) for o in sweep.breaches])
print("sound   :", sweep.sound)

# %%
# Tightening the policy does not open new holes. A client that demands
# fresher statements still rejects the replay, and exact matching still
# accepts the honest server.
from salve import ClientPolicy

strict = ClientPolicy(freshness_threshold=30, distance_threshold=0)
for kind in (AttackKind.HONEST, AttackKind.STALE_REPLAY, AttackKind.OWN_SIM_STATEMENT):
    out = run_attack(AttackScenario(kind, KexMode.DHE, policy=strict))
    print(kind.value, "->", out.outcome, out.reason)
