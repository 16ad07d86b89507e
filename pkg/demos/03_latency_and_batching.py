"""
Where the extra latency goes, and how batching pays it back
===========================================================

Latency is measured at the server, from ClientHello to the last message
it sends, on the virtual clock with per-step CPU costs calibrated for this
implementation.
"""

# %%
import numpy as np

from salve import MerkleBatching, Topology
from salve.bench import bench_one

np.set_printoptions(precision=2)

# %%
# One client at a time. The delta against plain TLS tracks the round trip
# to the GMLC: about 2g for a one-way latency of g.
for g in (5, 15, 50):
    topo = Topology.default().with_latency("server", "gmlc", g)
    plain = bench_one("plain", 1, topology=topo, handshakes=100)
    salve = bench_one("salve", 1, topology=topo, handshakes=100)
    delta = salve.p50_ms - plain.p50_ms
    print(f"g={g:3} ms  plain p50 {plain.p50_ms:7.2f}  salve p50 {salve.p50_ms:7.2f}  delta/2g {delta / (2 * g):.3f}")

# %%
# Under saturation the GMLC round trip overlaps with other work, and what
# remains is the extra CPU per handshake.
topo = Topology.default().with_latency("server", "gmlc", 0)
plain = bench_one("plain", 300, topology=topo, handshakes=2000)
salve = bench_one("salve", 300, topology=topo, handshakes=2000)
print(f"throughput {plain.rps:.0f} -> {salve.rps:.0f} rps ({1 - salve.rps / plain.rps:.1%} fewer)")

# %%
# Merkle batching: N sessions share one signed root, so the GMLC sees N
# times fewer requests. Each client checks its own inclusion proof.
for n in (1, 2, 8, 32):
    row = bench_one("salve-merkle", n, handshakes=256, batch=MerkleBatching(window_ms=50, max_batch=n))
    lat = np.array(row.latencies_ms)
    print(f"N={n:2}  gmlc requests {row.gmlc_requests:4}  p50 {np.median(lat):6.2f} ms  failures {row.failures}")
