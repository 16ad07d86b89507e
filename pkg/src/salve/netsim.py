"""Deterministic discrete-event network with per-link latency and adversary taps.

Everything runs on one virtual clock. Messages on a connection are
delivered in send order after the link's one-way latency; a *tap* on a
link sees every message and may drop, rewrite, delay or inject. An
*interceptor* can take over connections opened towards an address, which
is how an active man-in-the-middle terminates the client's handshake.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Callable, Optional

# roughly 2023-11-14; makes simulated timestamps look like real ones
DEFAULT_EPOCH = 1_700_000_000.0


class VirtualClock:
    def __init__(self, start: float = DEFAULT_EPOCH):
        self.now = float(start)

    def __call__(self) -> float:
        return self.now


class ConnectionRefused(ConnectionError):
    pass


# tap(conn, sender_address, data) -> list of (extra_delay_s, data) to deliver
Tap = Callable[["Connection", str, bytes], list]


class Endpoint:
    """One side of a connection."""

    def __init__(self, conn: "Connection", address: str):
        self.conn = conn
        self.address = address
        self.on_data: Optional[Callable[[bytes], None]] = None
        self.on_close: Optional[Callable[[], None]] = None

    @property
    def peer(self) -> "Endpoint":
        return self.conn.b if self is self.conn.a else self.conn.a

    def send(self, data: bytes) -> None:
        self.conn.net._transmit(self.conn, self, data)

    def close(self) -> None:
        self.conn.close()


class Connection:
    def __init__(self, net: "SimNetwork", cid: int, src: str, dst: str):
        self.net = net
        self.id = cid
        self.a = Endpoint(self, src)
        self.b = Endpoint(self, dst)
        self.closed = False
        self.bytes_sent = 0
        self.messages_sent = 0

    def close(self) -> None:
        """Stop accepting sends; data already in flight is still delivered."""
        if self.closed:
            return
        self.closed = True
        delay = self.net.latency(self.a.address, self.b.address)
        for end in (self.a, self.b):
            if end.on_close is not None:
                self.net.schedule(delay, end.on_close)


@dataclass
class Cpu:
    """FIFO processor with ``cores`` parallel workers, costs in virtual seconds."""

    net: "SimNetwork"
    cores: int = 1

    def __post_init__(self):
        self._free_at = [self.net.now] * self.cores
        self.busy_time = 0.0

    def submit(self, cost: float, fn: Callable, *args) -> None:
        i = min(range(self.cores), key=self._free_at.__getitem__)
        start = max(self.net.now, self._free_at[i])
        self._free_at[i] = start + cost
        self.busy_time += cost
        self.net.schedule_at(start + cost, fn, *args)


class SimNetwork:
    def __init__(self, clock: Optional[VirtualClock] = None):
        self.clock = clock or VirtualClock()
        self._queue: list = []
        self._seq = itertools.count()
        self._cids = itertools.count(1)
        self._endpoints: dict = {}
        self._latency: dict = {}
        self._taps: dict = {}
        self._interceptors: dict = {}
        self.default_latency = 0.0
        self.delivered = 0

    @property
    def now(self) -> float:
        return self.clock.now

    # -- scheduling --

    def schedule(self, delay: float, fn: Callable, *args) -> None:
        self.schedule_at(self.now + max(0.0, delay), fn, *args)

    def schedule_at(self, when: float, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (max(when, self.now), next(self._seq), fn, args))

    def run(self, until: Optional[float] = None, stop: Optional[Callable[[], bool]] = None) -> None:
        """Process events in time order until idle, ``until`` or ``stop()``."""
        while self._queue:
            if stop is not None and stop():
                return
            when, _, fn, args = self._queue[0]
            if until is not None and when > until:
                self.clock.now = until
                return
            heapq.heappop(self._queue)
            self.clock.now = when
            fn(*args)

    def advance(self, seconds: float) -> None:
        self.run(until=self.now + seconds)

    @property
    def idle(self) -> bool:
        return not self._queue

    # -- topology --

    def register(self, address: str, accept: Callable[[Endpoint], None]) -> None:
        self._endpoints[address] = accept

    def unregister(self, address: str) -> None:
        self._endpoints.pop(address, None)

    def set_latency(self, a: str, b: str, one_way_ms: float) -> None:
        self._latency[frozenset((a, b))] = one_way_ms / 1000.0

    def latency(self, a: str, b: str) -> float:
        return self._latency.get(frozenset((a, b)), self.default_latency)

    def add_tap(self, a: str, b: str, tap: Tap) -> None:
        self._taps[frozenset((a, b))] = tap

    def remove_tap(self, a: str, b: str) -> None:
        self._taps.pop(frozenset((a, b)), None)

    def intercept(self, src: str, dst: str, accept: Callable[[Endpoint], None], via: str) -> None:
        """Route connections from ``src`` to ``dst`` into ``accept`` at address ``via``."""
        self._interceptors[(src, dst)] = (accept, via)

    def connect(self, src: str, dst: str) -> Endpoint:
        """Open a connection; returns the caller's end. Raises ConnectionRefused."""
        accept = None
        dst_addr = dst
        if (src, dst) in self._interceptors:
            accept, dst_addr = self._interceptors[(src, dst)]
        else:
            accept = self._endpoints.get(dst)
        if accept is None:
            raise ConnectionRefused(dst)
        conn = Connection(self, next(self._cids), src, dst_addr)
        accept(conn.b)
        return conn.a

    def _transmit(self, conn: Connection, sender: Endpoint, data: bytes) -> None:
        if conn.closed:
            return
        receiver = sender.peer
        conn.bytes_sent += len(data)
        conn.messages_sent += 1
        base = self.latency(sender.address, receiver.address)
        tap = self._taps.get(frozenset((sender.address, receiver.address)))
        deliveries = [(0.0, data)] if tap is None else tap(conn, sender.address, data)
        for extra, payload in deliveries:
            self.schedule(base + extra, self._deliver, conn, receiver, payload)

    def _deliver(self, conn: Connection, receiver: Endpoint, data: bytes) -> None:
        if receiver.on_data is None:
            return
        self.delivered += 1
        receiver.on_data(data)


@dataclass(frozen=True)
class CostModel:
    """Virtual CPU time (seconds) charged per protocol step.

    The zero model makes every step instantaneous, which is what the attack
    harness uses. :meth:`desktop` carries per-step costs measured for this
    implementation on a commodity desktop (see ``salve.bench.calibrate``).
    """

    server_hello: float = 0.0  # key share + handshake signature
    server_key_exchange: float = 0.0  # DH combine + master derivation
    server_finished: float = 0.0
    server_statement: float = 0.0  # MLP request/response handling + sealing
    client_key_exchange: float = 0.0
    client_verify: float = 0.0  # location-statement verification
    gmlc_issue: float = 0.0  # parse request, sign statement, encode response
    gmlc_cores: int = 4

    @classmethod
    def desktop(cls) -> "CostModel":
        return cls(
            server_hello=DESKTOP_COSTS["server_hello"],
            server_key_exchange=DESKTOP_COSTS["server_key_exchange"],
            server_finished=DESKTOP_COSTS["server_finished"],
            server_statement=DESKTOP_COSTS["server_statement"],
            client_key_exchange=DESKTOP_COSTS["client_key_exchange"],
            client_verify=DESKTOP_COSTS["client_verify"],
            gmlc_issue=DESKTOP_COSTS["gmlc_issue"],
        )


# medians of three salve.bench.calibrate(300) runs on the reference machine
DESKTOP_COSTS = {
    "server_hello": 420e-6,
    "server_key_exchange": 107e-6,
    "server_finished": 17e-6,
    "server_statement": 51e-6,
    "client_key_exchange": 200e-6,
    "client_verify": 106e-6,
    "gmlc_issue": 480e-6,
}
