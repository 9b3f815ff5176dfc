"""Single-threaded discrete-event engine with lossy links and failure injection.

Time is an integer number of microseconds. Events run in (time, seqno)
order, where seqno is the order in which they were scheduled, so two runs
of the same scenario with the same seed are identical.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple

from .codec import FlowId, Packet


class SimulationError(Exception):
    """Fatal scenario error raised by the engine (e.g. scheduling into the past)."""


class EventKind(enum.Enum):
    ARRIVAL = "arrival"
    TIMER = "timer"
    FAILURE = "failure"
    REPAIR = "repair"


@dataclass(order=True)
class Event:
    time: int
    seqno: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False)
    packet: Optional[Packet] = field(default=None, compare=False)
    link: Optional[str] = field(default=None, compare=False)
    token: Any = field(default=None, compare=False)


class Node(Protocol):
    name: str
    failed: bool

    def receive(self, packet: Packet, link: "Link", now: int) -> None: ...

    def on_timer(self, token: Any, now: int) -> None: ...


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class Link:
    """Bidirectional link. Each link owns an RNG stream derived from the run seed,
    so adding delay elsewhere never reshuffles this link's loss and jitter draws.
    """

    id: str
    endpoints: Tuple[str, str]
    one_way_delay: int = 100
    jitter: int = 0
    loss_prob: float = 0.0
    is_wireless: bool = False
    up: bool = True
    bytes_carried: int = 0
    packets: int = 0
    loss_drops: int = 0
    down_drops: int = 0
    rng: random.Random = field(default_factory=random.Random, repr=False)

    def __post_init__(self):
        if self.one_way_delay < 0 or self.jitter < 0:
            raise ValueError(f"link {self.id}: negative delay or jitter")
        if self.one_way_delay + self.jitter <= 0:
            raise ValueError(f"link {self.id}: delay + jitter must be positive")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"link {self.id}: loss probability outside [0, 1]")

    def peer(self, node: str) -> str:
        a, b = self.endpoints
        if node == a:
            return b
        if node == b:
            return a
        raise SimulationError(f"{node} is not an endpoint of link {self.id}")


@dataclass(frozen=True)
class FailureSpec:
    target: str
    at: int
    repair_at: Optional[int] = None

    def __post_init__(self):
        if self.repair_at is not None and self.repair_at <= self.at:
            raise ValueError(f"failure of {self.target}: repair must come after onset")


class Metrics:
    """Per-flow named counters plus an optional event trace."""

    def __init__(self, tracing: bool = False):
        self.counters: Dict[FlowId, Counter] = {}
        self.tracing = tracing
        self.trace: List[Tuple[Any, ...]] = []

    def count(self, flow: FlowId, name: str, n: int = 1) -> None:
        c = self.counters.get(flow)
        if c is None:
            c = self.counters[flow] = Counter()
        c[name] += n

    def get(self, flow: FlowId, name: str) -> int:
        c = self.counters.get(flow)
        return c[name] if c else 0

    def record(self, *entry: Any) -> None:
        if self.tracing:
            self.trace.append(entry)


@dataclass
class EngineReport:
    end_time: int
    events: int
    pending: int
    drained: bool


class Engine:
    def __init__(self, seed: int = 0, tracing: bool = False):
        self.seed = seed
        self.now = 0
        self.nodes: Dict[str, Node] = {}
        self.links: Dict[str, Link] = {}
        self._by_endpoints: Dict[Tuple[str, str], Link] = {}
        self.queue: List[Event] = []
        self._seqno = 0
        self.events_run = 0
        self.metrics = Metrics(tracing)
        self.on_failure: List[Callable[[str, int], None]] = []

    # topology

    def add_node(self, node: Node) -> Node:
        if node.name in self.nodes:
            raise SimulationError(f"duplicate node {node.name}")
        self.nodes[node.name] = node
        return node

    def add_link(self, link: Link) -> Link:
        if link.id in self.links:
            raise SimulationError(f"duplicate link {link.id}")
        for end in link.endpoints:
            if end not in self.nodes:
                raise SimulationError(f"link {link.id} references unknown node {end}")
        link.rng = random.Random(derive_seed(self.seed, link.id))
        self.links[link.id] = link
        a, b = link.endpoints
        self._by_endpoints[(a, b)] = link
        self._by_endpoints[(b, a)] = link
        return link

    def link_between(self, a: str, b: str) -> Optional[Link]:
        return self._by_endpoints.get((a, b))

    # events

    def schedule(self, e: Event) -> Event:
        if e.time < self.now:
            raise SimulationError(f"event at t={e.time} scheduled in the past (now={self.now})")
        e.seqno = self._seqno
        self._seqno += 1
        heapq.heappush(self.queue, e)
        return e

    def timer(self, node: str, at: int, token: Any = None) -> Event:
        return self.schedule(Event(at, 0, EventKind.TIMER, node, token=token))

    def transmit(self, link: Link, packet: Packet, sender: str, now: Optional[int] = None) -> None:
        now = self.now if now is None else now
        far = link.peer(sender)
        if not link.up:
            link.down_drops += 1
            self.metrics.count(packet.flow, "down_drops")
            self.metrics.record(now, "down_drop", link.id, packet.payload_id, packet.copy)
            return
        # Both draws happen on every transmission to keep the stream aligned.
        u = link.rng.random()
        extra = link.rng.randint(0, link.jitter) if link.jitter else 0
        size = packet.wire_size
        link.bytes_carried += size
        link.packets += 1
        if link.is_wireless:
            self.metrics.count(packet.flow, "wireless_bytes", packet.payload_len)
            self.metrics.count(packet.flow, "wireless_wire_bytes", size)
        self.metrics.record(now, "tx", link.id, sender, packet.payload_id, packet.copy, packet.header_stack)
        if u < link.loss_prob:
            link.loss_drops += 1
            self.metrics.count(packet.flow, "loss_drops")
            self.metrics.record(now, "loss_drop", link.id, packet.payload_id, packet.copy)
            return
        self.schedule(
            Event(now + link.one_way_delay + extra, 0, EventKind.ARRIVAL, far, packet=packet, link=link.id)
        )

    def send(self, sender: str, receiver: str, packet: Packet) -> bool:
        """Transmit over the link joining two nodes; False when they are not adjacent."""
        link = self.link_between(sender, receiver)
        if link is None:
            self.metrics.count(packet.flow, "no_route_drops")
            return False
        self.transmit(link, packet, sender)
        return True

    def inject(self, f: FailureSpec) -> None:
        if f.target not in self.links and f.target not in self.nodes:
            raise SimulationError(f"failure targets unknown element {f.target}")
        self.schedule(Event(f.at, 0, EventKind.FAILURE, f.target))
        if f.repair_at is not None:
            self.schedule(Event(f.repair_at, 0, EventKind.REPAIR, f.target))

    def is_up(self, element: str) -> bool:
        if element in self.links:
            return self.links[element].up
        return not self.nodes[element].failed

    def _set_state(self, target: str, up: bool) -> None:
        if target in self.links:
            self.links[target].up = up
        else:
            self.nodes[target].failed = not up

    def run(self, until: Optional[int] = None) -> EngineReport:
        while self.queue:
            if until is not None and self.queue[0].time > until:
                break
            e = heapq.heappop(self.queue)
            self.now = e.time
            self.events_run += 1
            if e.kind is EventKind.ARRIVAL:
                node = self.nodes[e.target]
                if node.failed:
                    self.metrics.count(e.packet.flow, "node_drops")
                    self.metrics.record(e.time, "node_drop", e.target, e.packet.payload_id, e.packet.copy)
                    continue
                node.receive(e.packet, self.links[e.link], e.time)
            elif e.kind is EventKind.TIMER:
                node = self.nodes[e.target]
                node.on_timer(e.token, e.time)
            else:
                up = e.kind is EventKind.REPAIR
                self._set_state(e.target, up)
                self.metrics.record(e.time, e.kind.value, e.target)
                if not up:
                    for hook in self.on_failure:
                        hook(e.target, e.time)
        if until is not None and not self.queue:
            self.now = max(self.now, until)
        return EngineReport(
            end_time=self.now,
            events=self.events_run,
            pending=len(self.queue),
            drained=not self.queue,
        )

    def pending_packets(self) -> List[Packet]:
        """Packets still held by queued events (in flight or in a node delay)."""
        out = []
        for e in self.queue:
            if e.packet is not None:
                out.append(e.packet)
            elif isinstance(e.token, tuple) and e.token and isinstance(e.token[-1], Packet):
                out.append(e.token[-1])
        return out
