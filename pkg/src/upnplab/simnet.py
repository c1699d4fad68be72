"""Deterministic discrete-event network.

One flat broadcast domain: hosts exchange UDP-like datagrams, unicast or to a
multicast group, with a fixed one-tick latency and no loss. A host created
with ``spoof_capable=True`` may put any claimed source address on its
packets; the network still records the true sender for metrics.

Every packet also carries an *origin*: the true sender of the packet that
ultimately caused it. Handlers run with the delivered packet's origin as
ambient context, so a reply inherits it automatically. This is how reflected
traffic is attributed to whoever triggered it.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Union

from .errors import DuplicateHost, SpoofDenied, UnknownHost

LATENCY = 1
MAX_PAYLOAD = 4096


@dataclass(frozen=True)
class Unicast:
    host: str

    def __str__(self) -> str:
        return self.host


@dataclass(frozen=True)
class Multicast:
    group: str

    def __str__(self) -> str:
        return f"@{self.group}"


Destination = Union[Unicast, Multicast]


@dataclass(frozen=True)
class SimPacket:
    src: str
    dst: Destination
    payload: bytes
    sport: int = 0
    dport: int = 0
    kind: str = "raw"
    true_src: str = ""
    send_time: int = -1
    origin: str = ""


@dataclass
class Metrics:
    bytes_in: int = 0
    bytes_out: int = 0
    msgs_in: int = 0
    msgs_out: int = 0
    dropped: int = 0
    # origin host -> bytes received from packets that origin caused but did not send
    reflected_in: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        return {
            "bytes_in": self.bytes_in,
            "bytes_out": self.bytes_out,
            "msgs_in": self.msgs_in,
            "msgs_out": self.msgs_out,
            "dropped": self.dropped,
            "reflected_in": dict(sorted(self.reflected_in.items())),
        }


@dataclass(frozen=True)
class LogRecord:
    tick: int
    seq: int
    true_src: str
    claimed_src: str
    dst: str
    size: int
    kind: str
    origin: str = ""
    sport: int = 0
    dport: int = 0

    def to_line(self) -> str:
        return f"{self.tick},{self.seq},{self.true_src},{self.claimed_src},{self.dst},{self.size},{self.kind}"


def format_log(records) -> str:
    return "".join(r.to_line() + "\n" for r in records)


@dataclass(frozen=True)
class AuditEvent:
    """A security decision recorded by a participant."""

    tick: int
    host: str
    operation: str
    decision: str
    subject: str
    claimed_src: str
    detail: str = ""

    @property
    def is_deny(self) -> bool:
        return self.decision not in ("Permit", "Accept")

    def to_line(self) -> str:
        return f"{self.tick},{self.host},{self.operation},{self.decision},{self.subject},{self.claimed_src},{self.detail}"


Handler = Callable[[SimPacket], None]


class Host:
    """Handle for one simulated host. ``handler`` receives delivered packets."""

    def __init__(self, net: "Network", host_id: str, spoof_capable: bool):
        self.net = net
        self.id = host_id
        self.spoof_capable = spoof_capable
        self.handler: Optional[Handler] = None
        self.groups: set[str] = set()
        self._ports = itertools.count(49152)

    def __repr__(self) -> str:
        return f"Host({self.id!r})"

    @property
    def metrics(self) -> Metrics:
        return self.net.metrics[self.id]

    def ephemeral_port(self) -> int:
        port = next(self._ports)
        if port > 65535:
            self._ports = itertools.count(49152)
            port = next(self._ports)
        return port

    def join(self, group: str) -> None:
        self.net.join_multicast(self.id, group)

    def send(self, dst: Destination, payload: bytes, *, sport: int = 0, dport: int = 0,
             kind: str = "raw", src: Optional[str] = None, origin: Optional[str] = None) -> SimPacket:
        pkt = SimPacket(src=self.id if src is None else src, dst=dst, payload=payload,
                        sport=sport, dport=dport, kind=kind, origin=origin or "")
        return self.net.send(self.id, pkt)


class Network:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0
        self.hosts: dict[str, Host] = {}
        self.groups: dict[str, dict[str, None]] = {}
        self.metrics: dict[str, Metrics] = {}
        self.log: list[LogRecord] = []
        self.audit: list[AuditEvent] = []
        self._queue: list = []
        self._seq = itertools.count()
        self._log_seq = itertools.count()
        self._origin: Optional[str] = None

    # -- topology ---------------------------------------------------------

    def create_host(self, host_id: str, spoof_capable: bool = False) -> Host:
        if host_id in self.hosts:
            raise DuplicateHost(host_id)
        host = Host(self, host_id, spoof_capable)
        self.hosts[host_id] = host
        self.metrics[host_id] = Metrics()
        return host

    def host(self, host_id: str) -> Host:
        try:
            return self.hosts[host_id]
        except KeyError:
            raise UnknownHost(host_id) from None

    def join_multicast(self, host_id: str, group: str) -> None:
        host = self.host(host_id)
        self.groups.setdefault(group, {})[host_id] = None
        host.groups.add(group)

    # -- traffic ----------------------------------------------------------

    @property
    def current_origin(self) -> Optional[str]:
        """Origin of the packet being handled right now, if any."""
        return self._origin

    def send(self, host_id: str, pkt: SimPacket) -> SimPacket:
        sender = self.host(host_id)
        if pkt.src != host_id and not sender.spoof_capable:
            raise SpoofDenied(f"{host_id} may not claim source {pkt.src}")
        if len(pkt.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(pkt.payload)} bytes exceeds {MAX_PAYLOAD}")
        origin = pkt.origin or self._origin or host_id
        pkt = replace(pkt, true_src=host_id, send_time=self.now, origin=origin)
        m = self.metrics[host_id]
        m.bytes_out += len(pkt.payload)
        m.msgs_out += 1
        when = self.now + LATENCY
        if isinstance(pkt.dst, Multicast):
            for member in self.groups.get(pkt.dst.group, {}):
                if member != host_id:
                    heapq.heappush(self._queue, (when, next(self._seq), "deliver", member, pkt))
        else:
            heapq.heappush(self._queue, (when, next(self._seq), "deliver", pkt.dst.host, pkt))
        return pkt

    def schedule(self, at: int, callback: Callable[[], None]) -> None:
        """Run ``callback`` at tick ``at`` (ordered with deliveries by sequence)."""
        if at < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._queue, (at, next(self._seq), "timer", None, callback))

    def _deliver(self, receiver: str, pkt: SimPacket) -> LogRecord:
        size = len(pkt.payload)
        host = self.hosts.get(receiver)
        if host is None:
            self.metrics[pkt.true_src].dropped += 1
            rec = LogRecord(self.now, next(self._log_seq), pkt.true_src, pkt.src, receiver, size,
                            "drop:" + pkt.kind, pkt.origin, pkt.sport, pkt.dport)
            self.log.append(rec)
            return rec
        m = self.metrics[receiver]
        m.bytes_in += size
        m.msgs_in += 1
        if pkt.origin != pkt.true_src:
            m.reflected_in[pkt.origin] = m.reflected_in.get(pkt.origin, 0) + size
        rec = LogRecord(self.now, next(self._log_seq), pkt.true_src, pkt.src, receiver, size,
                        pkt.kind, pkt.origin, pkt.sport, pkt.dport)
        self.log.append(rec)
        if host.handler is not None:
            self._origin = pkt.origin
            try:
                host.handler(pkt)
            finally:
                self._origin = None
        return rec

    def _step(self) -> Optional[LogRecord]:
        when, _, what, receiver, item = heapq.heappop(self._queue)
        self.now = when
        if what == "timer":
            item()
            return None
        return self._deliver(receiver, item)

    def run_until(self, t: int) -> list[LogRecord]:
        """Process every event due at or before tick ``t``; return their log records."""
        if t < self.now:
            raise ValueError(f"t={t} is before now={self.now}")
        out = []
        while self._queue and self._queue[0][0] <= t:
            rec = self._step()
            if rec is not None:
                out.append(rec)
        self.now = t
        return out

    def run_until_idle(self, limit: int = 1_000_000) -> list[LogRecord]:
        """Drain the queue (bounded by ``limit`` ticks from now)."""
        out = []
        horizon = self.now + limit
        while self._queue and self._queue[0][0] <= horizon:
            rec = self._step()
            if rec is not None:
                out.append(rec)
        return out

    @property
    def idle(self) -> bool:
        return not self._queue

    def record_audit(self, host: str, operation: str, decision: str, subject: str = "",
                     claimed_src: str = "", detail: str = "") -> AuditEvent:
        event = AuditEvent(self.now, host, operation, decision, subject, claimed_src, detail)
        self.audit.append(event)
        return event

    def deny_events(self, since: int = 0) -> list[AuditEvent]:
        return [e for e in self.audit[since:] if e.is_deny]


def amplification_factor(metrics: dict[str, Metrics], attacker: str, victim: str) -> Fraction:
    """Reflected bytes delivered to ``victim`` per byte the attacker sent.

    Counts only traffic the attacker caused but did not itself transmit.
    Raises ``ZeroDivisionError`` if the attacker sent nothing.
    """
    spent = metrics[attacker].bytes_out
    if spent == 0:
        raise ZeroDivisionError(f"{attacker} sent no bytes")
    return Fraction(metrics[victim].reflected_in.get(attacker, 0), spent)
