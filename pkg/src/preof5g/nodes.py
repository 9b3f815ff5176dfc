"""5G user-plane entities with PREOF protection, wired into the two templates.

Template ``pti_in_gnb``: one gNB per UE population, replication at the gNB
(integrated) or at a co-located PTI node behind it. Template ``pti_in_ue``:
the UE replicates and reaches one gNB per member path over its own wireless
link. In both, every member path has its own UPF, the uplink PTE sits in
front of the data-network edge and the edge node is the downlink PTI.

Node names are fixed except for UEs, UPFs and (template ``pti_in_ue``)
gNBs, which come from the scenario. Link ids are ``<a>~<b>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .codec import (
    CodecError,
    Direction,
    FlowId,
    GtpuHeader,
    Packet,
    ProtectionHeader,
    decode_gtpu,
    decode_protection,
    encode_gtpu,
    encode_protection,
    header_balance,
    pop_header,
    push_header,
)
from .netsim import Engine, Link
from .preof import (
    DEFAULT_CAPACITY,
    DEFAULT_WINDOW,
    ConfigurationError,
    FlowEliminationState,
    ReorderBuffer,
    SequenceGenerator,
    Verdict,
    pef_accept,
    pof_close,
    pof_expire,
    pof_submit,
    pref_replicate,
)

GNB = "gnb"
PTI = "pti"
PTE = "pte"
DN = "dn"
FAILOVER = "_failover"


class Role(enum.Enum):
    UE = "UE"
    GNB = "GNB"
    UPF = "UPF"
    PTI = "PTI"
    PTE = "PTE"
    PTE_O = "PTE_O"
    DN_EDGE = "DN_EDGE"
    PROXY = "PROXY"


class Variant(enum.Enum):
    PTI_IN_GNB = "pti_in_gnb"
    PTI_IN_UE = "pti_in_ue"


@dataclass
class TopologyTemplate:
    variant: Variant = Variant.PTI_IN_GNB
    path_count: int = 2
    proxy_enabled: bool = False
    ordering_offload: bool = False
    co_located_pti: bool = False
    proxy_delay: int = 0

    def __post_init__(self):
        if self.co_located_pti and self.variant is not Variant.PTI_IN_GNB:
            raise ConfigurationError("a co-located PTI only exists in the pti_in_gnb template")
        if self.proxy_delay < 0:
            raise ConfigurationError("proxy delay must be non-negative")


@dataclass
class PathSpec:
    name: str
    upf: str
    gnb: Optional[str] = None


@dataclass
class PreofConfig:
    window: int = DEFAULT_WINDOW
    pof_timeout: Optional[int] = None  # None: derive from path skew
    pof_capacity: int = DEFAULT_CAPACITY
    seq_start: int = 0


@dataclass
class FlowSpec:
    flow: FlowId
    ue: str
    count: int
    gap: int
    payload_len: int = 1000
    dscp: int = 0
    start: int = 0

    def payload_id(self, index: int) -> int:
        return (self.flow.value << 40) | (int(self.flow.direction is Direction.DOWNLINK) << 32) | index


@dataclass(frozen=True)
class SessionEntry:
    teid: int
    ue: str
    dn_next_hop: str
    ran_teid: int
    qos_priority: str = "default"


@dataclass(frozen=True)
class LinkSlot:
    id: str
    a: str
    b: str
    wireless: bool = False
    path: Optional[int] = None


_HIGH_DSCP = {40, 44, 46, 48, 56}
_MEDIUM_DSCP = {10, 12, 14, 18, 20, 22, 26, 28, 30, 34, 36, 38}


def classify_dscp(dscp: int) -> str:
    if dscp in _HIGH_DSCP:
        return "high"
    if dscp in _MEDIUM_DSCP:
        return "medium"
    return "default"


def uplink_teid(flow: FlowId, path: int) -> int:
    return 0x10000000 | (flow.value << 4) | path


def ran_teid(ue_index: int) -> int:
    return 0x20000000 | ue_index


def link_id(a: str, b: str) -> str:
    return f"{a}~{b}"


def pteo_name(pte: str) -> str:
    return f"pteo-{pte}"


def downlink_pte(template: TopologyTemplate, ue: str) -> str:
    if template.variant is Variant.PTI_IN_UE:
        return ue
    return PTI if template.co_located_pti else GNB


def template_nodes(
    template: TopologyTemplate, paths: List[PathSpec], ues: List[str], downlink_ues: List[str]
) -> List[Tuple[str, Role]]:
    nodes: List[Tuple[str, Role]] = [(ue, Role.UE) for ue in ues]
    if template.variant is Variant.PTI_IN_GNB:
        nodes.append((GNB, Role.GNB))
        if template.co_located_pti:
            nodes.append((PTI, Role.PTI))
    else:
        nodes.extend((p.gnb, Role.GNB) for p in paths)
    nodes.extend((p.upf, Role.UPF) for p in paths)
    nodes.append((PTE, Role.PTE))
    nodes.append((DN, Role.DN_EDGE))
    if template.ordering_offload:
        nodes.append((pteo_name(PTE), Role.PTE_O))
        for pte in dict.fromkeys(downlink_pte(template, ue) for ue in downlink_ues):
            nodes.append((pteo_name(pte), Role.PTE_O))
    return nodes


def template_links(
    template: TopologyTemplate, paths: List[PathSpec], ues: List[str], downlink_ues: List[str]
) -> List[LinkSlot]:
    """Every link the template needs, in a stable order."""
    slots: List[LinkSlot] = []
    if template.variant is Variant.PTI_IN_GNB:
        slots.extend(LinkSlot(link_id(ue, GNB), ue, GNB, wireless=True) for ue in ues)
        if template.co_located_pti:
            slots.append(LinkSlot(link_id(GNB, PTI), GNB, PTI))
            ran = PTI
        else:
            ran = GNB
        for i, p in enumerate(paths):
            slots.append(LinkSlot(link_id(ran, p.upf), ran, p.upf, path=i))
    else:
        for i, p in enumerate(paths):
            slots.extend(
                LinkSlot(link_id(ue, p.gnb), ue, p.gnb, wireless=True, path=i) for ue in ues
            )
            slots.append(LinkSlot(link_id(p.gnb, p.upf), p.gnb, p.upf, path=i))
    for i, p in enumerate(paths):
        slots.append(LinkSlot(link_id(p.upf, PTE), p.upf, PTE, path=i))
    slots.append(LinkSlot(link_id(PTE, DN), PTE, DN))
    if downlink_ues:
        for i, p in enumerate(paths):
            slots.append(LinkSlot(link_id(DN, p.upf), DN, p.upf, path=i))
    if template.ordering_offload:
        slots.append(LinkSlot(link_id(PTE, pteo_name(PTE)), PTE, pteo_name(PTE)))
        for pte in dict.fromkeys(downlink_pte(template, ue) for ue in downlink_ues):
            slots.append(LinkSlot(link_id(pte, pteo_name(pte)), pte, pteo_name(pte)))
    return slots


def member_path_links(
    template: TopologyTemplate, paths: List[PathSpec], flow: FlowSpec, i: int
) -> List[str]:
    """Links of member path ``i`` between the flow's PTI and PTE, in order."""
    p = paths[i]
    if template.variant is Variant.PTI_IN_GNB:
        ran = PTI if template.co_located_pti else GNB
        core = [link_id(ran, p.upf)]
        ran_side: List[str] = []
    else:
        core = [link_id(p.gnb, p.upf)]
        ran_side = [link_id(flow.ue, p.gnb)]
    if flow.flow.direction is Direction.UPLINK:
        return ran_side + core + [link_id(p.upf, PTE)]
    return [link_id(DN, p.upf)] + core + ran_side


def path_elements(
    template: TopologyTemplate, paths: List[PathSpec], ues: List[str], i: int
) -> List[str]:
    """Nodes and links that belong to member path ``i`` only."""
    p = paths[i]
    elems = [p.upf]
    if template.variant is Variant.PTI_IN_UE:
        elems.append(p.gnb)
        elems.extend(link_id(ue, p.gnb) for ue in ues)
        elems.append(link_id(p.gnb, p.upf))
    else:
        ran = PTI if template.co_located_pti else GNB
        elems.append(link_id(ran, p.upf))
    elems.append(link_id(p.upf, PTE))
    elems.append(link_id(DN, p.upf))
    return elems


@dataclass
class FlowLog:
    """What the sink saw for one flow."""

    latencies: List[int] = field(default_factory=list)
    delivered_ids: List[int] = field(default_factory=list)
    max_index: int = -1
    out_of_order: int = 0


class BaseNode:
    role = Role.UE

    def __init__(self, name: str, net: "Network"):
        self.name = name
        self.net = net
        self.failed = False
        self.node_id = 0

    @property
    def engine(self) -> Engine:
        return self.net.engine

    def count(self, packet: Packet, name: str, n: int = 1) -> None:
        self.engine.metrics.count(packet.flow, name, n)

    def send(self, to: str, packet: Packet) -> None:
        self.engine.send(self.name, to, packet)

    def receive(self, packet: Packet, link: Link, now: int) -> None:
        try:
            self.handle(packet, link.peer(self.name), now)
        except CodecError as exc:
            self.count(packet, "malformed_drops")
            self.engine.metrics.record(now, "malformed", self.name, packet.payload_id, str(exc))

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        raise NotImplementedError

    def on_timer(self, token: Any, now: int) -> None:
        kind = token[0]
        if kind == "send":
            self.originate(token[1], token[2], now)
        elif kind == "forward":
            _, to, packet = token
            if self.failed:
                self.count(packet, "node_drops")
            else:
                self.send(to, packet)

    # traffic sources

    def originate(self, spec: FlowSpec, index: int, now: int) -> None:
        if index + 1 < spec.count:
            self.engine.timer(self.name, now + spec.gap, ("send", spec, index + 1))
        packet = Packet(
            payload_id=spec.payload_id(index),
            payload_len=spec.payload_len,
            flow=spec.flow,
            created_at=now,
            inner_dscp=spec.dscp,
            trace=() if self.engine.metrics.tracing else None,
        )
        self.count(packet, "sent")
        if self.failed:
            self.count(packet, "node_drops")
            return
        self.emit(spec, packet, now)

    def emit(self, spec: FlowSpec, packet: Packet, now: int) -> None:
        raise NotImplementedError

    # replication

    def replicate(self, packet: Packet, pte: str, now: int) -> List[Packet]:
        net = self.net
        copies = net.replicate(packet, net.generator(packet.flow), pte)
        self.count(packet, "replicas", len(copies) - 1)
        seq = copies[0].protection().seq
        self.engine.metrics.record(
            now, "replicate", self.name, packet.flow, packet.payload_id, seq, len(copies)
        )
        return copies

    # elimination

    def eliminate(self, packet: Packet, now: int) -> None:
        """Run the elimination function on a packet whose outermost header is
        the protection header, then hand survivors to ``after_elimination``."""
        h = packet.outermost
        if not isinstance(h, ProtectionHeader):
            self.count(packet, "misroute_drops")
            return
        decode_protection(encode_protection(h))
        if h.pte_address != self.node_id:
            self.count(packet, "misroute_drops")
            return
        state = self.net.elimination_state(self.name, packet.flow)
        verdict = pef_accept(state, h.seq)
        metrics = self.engine.metrics
        metrics.record(now, verdict.value, self.name, packet.flow, h.seq, packet.payload_id, packet.copy)
        if verdict is Verdict.DUPLICATE:
            self.count(packet, "duplicates_eliminated")
            return
        if verdict is Verdict.STALE:
            self.count(packet, "stale_drops")
            return
        self.count(packet, "pef_accepted")
        if self.net.template.ordering_offload:
            self.send(pteo_name(self.name), packet)
            return
        _, inner = pop_header(packet, ProtectionHeader)
        self.after_elimination(inner, now)

    def after_elimination(self, packet: Packet, now: int) -> None:
        raise NotImplementedError


class UENode(BaseNode):
    role = Role.UE

    def emit(self, spec: FlowSpec, packet: Packet, now: int) -> None:
        net = self.net
        if net.template.variant is Variant.PTI_IN_GNB:
            self.send(GNB, packet)
        elif net.baseline:
            self.send(net.paths[net.anchor].gnb, packet)
        else:
            for copy in self.replicate(packet, PTE, now):
                self.send(net.paths[copy.copy].gnb, copy)

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        net = self.net
        if sender == pteo_name(self.name):
            self.after_elimination(packet, now)
        elif (
            net.template.variant is Variant.PTI_IN_UE
            and isinstance(packet.outermost, ProtectionHeader)
        ):
            self.eliminate(packet, now)
        else:
            net.deliver(packet, now)

    def after_elimination(self, packet: Packet, now: int) -> None:
        self.net.deliver(packet, now)


class GNBNode(BaseNode):
    role = Role.GNB

    def __init__(self, name: str, net: "Network", path: Optional[int] = None):
        super().__init__(name, net)
        self.path = path  # member path index in the pti_in_ue template

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        net = self.net
        if sender == pteo_name(self.name):
            self.after_elimination(packet, now)
            return
        if packet.flow.direction is Direction.UPLINK:
            self.uplink(packet, now)
            return
        h, packet = pop_header(packet, GtpuHeader)
        decode_gtpu(encode_gtpu(h))
        if h.teid not in net.ran_sessions:
            self.count(packet, "session_miss_drops")
            return
        if (
            net.template.variant is Variant.PTI_IN_GNB
            and not net.template.co_located_pti
            and isinstance(packet.outermost, ProtectionHeader)
        ):
            self.eliminate(packet, now)
        else:
            self.send(net.ran_sessions[h.teid], packet)

    def uplink(self, packet: Packet, now: int) -> None:
        net = self.net
        spec = net.flows[packet.flow]
        if net.template.variant is Variant.PTI_IN_UE:
            self.send(
                net.paths[self.path].upf,
                gtpu_encapsulate(packet, uplink_teid(packet.flow, self.path)),
            )
        elif net.template.co_located_pti:
            teid = uplink_teid(packet.flow, net.anchor if net.baseline else 0)
            self.send(PTI, gtpu_encapsulate(packet, teid))
        elif net.baseline:
            self.send(
                net.paths[net.anchor].upf,
                gtpu_encapsulate(packet, uplink_teid(packet.flow, net.anchor)),
            )
        else:
            for copy in self.replicate(packet, PTE, now):
                i = copy.copy
                self.send(net.paths[i].upf, gtpu_encapsulate(copy, uplink_teid(spec.flow, i)))

    def after_elimination(self, packet: Packet, now: int) -> None:
        self.send(self.net.flows[packet.flow].ue, packet)


class PTINode(BaseNode):
    """Co-located PTI next to an unmodified gNB; also the downlink PTE there."""

    role = Role.PTI

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        net = self.net
        if sender == pteo_name(self.name):
            self.after_elimination(packet, now)
            return
        if packet.flow.direction is Direction.UPLINK:
            if net.baseline:
                self.send(net.paths[net.anchor].upf, packet)
                return
            for copy in self.replicate(packet, PTE, now):
                self.send(net.paths[copy.copy].upf, copy)
            return
        if net.baseline:
            self.send(GNB, packet)
            return
        h, packet = pop_header(packet, GtpuHeader)
        decode_gtpu(encode_gtpu(h))
        self.eliminate(packet, now)

    def after_elimination(self, packet: Packet, now: int) -> None:
        spec = self.net.flows[packet.flow]
        self.send(GNB, gtpu_encapsulate(packet, self.net.ue_ran_teid[spec.ue]))


class UPFNode(BaseNode):
    role = Role.UPF

    def __init__(self, name: str, net: "Network", path: int, ran_peer: str):
        super().__init__(name, net)
        self.path = path
        self.ran_peer = ran_peer
        self.sessions: Dict[int, SessionEntry] = {}
        self.sessions_by_ue: Dict[str, SessionEntry] = {}

    def provision(self, entries: List[SessionEntry]) -> None:
        for e in entries:
            self.sessions[e.teid] = e
            self.sessions_by_ue.setdefault(e.ue, e)

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        if packet.flow.direction is Direction.UPLINK:
            self.uplink(packet, now)
        else:
            self.downlink(packet, now)

    def uplink(self, packet: Packet, now: int) -> None:
        net = self.net
        outer = packet.outermost
        if isinstance(outer, GtpuHeader):
            h, packet = pop_header(packet, GtpuHeader)
            decode_gtpu(encode_gtpu(h))
            session = self.sessions.get(h.teid)
            if session is None:
                self.count(packet, "session_miss_drops")
                return
            next_hop = session.dn_next_hop
        elif isinstance(outer, ProtectionHeader):
            # Co-located PTI order: protection outermost, GTP-U stays inside.
            next_hop = None
        else:
            self.count(packet, "malformed_drops")
            return
        prot = packet.outermost
        if isinstance(prot, ProtectionHeader):
            decode_protection(encode_protection(prot))
            next_hop = net.node_name(prot.pte_address)
            if next_hop is None:
                self.count(packet, "no_route_drops")
                return
        self.classify_and_forward(packet, next_hop, now)

    def downlink(self, packet: Packet, now: int) -> None:
        spec = self.net.flows[packet.flow]
        session = self.sessions_by_ue.get(spec.ue)
        if session is None:
            self.count(packet, "session_miss_drops")
            return
        self.classify_and_forward(packet, self.ran_peer, now, push_teid=session.ran_teid)

    def classify_and_forward(
        self, packet: Packet, to: str, now: int, push_teid: Optional[int] = None
    ) -> None:
        template = self.net.template
        delay = 0
        if isinstance(packet.outermost, ProtectionHeader):
            if template.proxy_enabled:
                packet = self.net.proxy_expose_inner(self, packet)
                delay = template.proxy_delay
            else:
                self.count(packet, "class_default")
        else:
            # Nothing conceals the UE header (unprotected baseline traffic).
            self.count(packet, f"class_{classify_dscp(packet.inner_dscp)}")
        if push_teid is not None:
            packet = gtpu_encapsulate(packet, push_teid)
        if delay:
            self.engine.timer(self.name, now + delay, ("forward", to, packet))
        else:
            self.send(to, packet)


class PTENode(BaseNode):
    role = Role.PTE

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        if sender == pteo_name(self.name):
            self.after_elimination(packet, now)
        elif isinstance(packet.outermost, ProtectionHeader):
            self.eliminate(packet, now)
        else:
            self.after_elimination(packet, now)

    def after_elimination(self, packet: Packet, now: int) -> None:
        if isinstance(packet.outermost, GtpuHeader):
            h, packet = pop_header(packet, GtpuHeader)
            decode_gtpu(encode_gtpu(h))
        self.send(DN, packet)


class PTEONode(BaseNode):
    """External ordering server hanging off one PTE."""

    role = Role.PTE_O

    def __init__(self, name: str, net: "Network", owner: str):
        super().__init__(name, net)
        self.owner = owner
        self.buffers: Dict[FlowId, ReorderBuffer] = {}

    def buffer(self, flow: FlowId) -> ReorderBuffer:
        rb = self.buffers.get(flow)
        if rb is None:
            cfg = self.net.preof
            rb = self.buffers[flow] = ReorderBuffer(
                flow=flow,
                next_expected=cfg.seq_start,
                capacity=cfg.pof_capacity,
                timeout=self.net.pof_timeout(flow),
            )
        return rb

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        h = packet.outermost
        if not isinstance(h, ProtectionHeader):
            self.count(packet, "malformed_drops")
            return
        rb = self.buffer(packet.flow)
        before = len(rb)
        self._account(packet.flow, rb, lambda: pof_submit(rb, h.seq, packet, now))
        if len(rb) > before:
            self.engine.timer(self.name, now + rb.timeout, ("expire", packet.flow))

    def on_timer(self, token: Any, now: int) -> None:
        if self.failed or token[0] != "expire":
            return
        rb = self.buffers[token[1]]
        self._account(token[1], rb, lambda: pof_expire(rb, now))

    def close(self, flow: FlowId, end: int) -> None:
        rb = self.buffer(flow)
        self._account(flow, rb, lambda: pof_close(rb, end))

    def _account(self, flow: FlowId, rb: ReorderBuffer, step) -> None:
        late, gaps = rb.late_drop, rb.gap_skipped
        released = step()
        metrics = self.engine.metrics
        metrics.count(flow, "late_drops", rb.late_drop - late)
        metrics.count(flow, "gaps_skipped", rb.gap_skipped - gaps)
        for p in released:
            _, inner = pop_header(p, ProtectionHeader)
            self.send(self.owner, inner)


class DNEdgeNode(BaseNode):
    role = Role.DN_EDGE

    def emit(self, spec: FlowSpec, packet: Packet, now: int) -> None:
        net = self.net
        if net.baseline:
            self.send(net.paths[net.anchor].upf, packet)
            return
        pte = downlink_pte(net.template, spec.ue)
        for copy in self.replicate(packet, pte, now):
            self.send(net.paths[copy.copy].upf, copy)

    def handle(self, packet: Packet, sender: str, now: int) -> None:
        self.net.deliver(packet, now)


class FailoverController:
    """Baseline without PREOF: after a failure on the anchored path the UE
    is unreachable for a fixed outage, then re-anchors to a healthy path."""

    name = FAILOVER

    def __init__(self, net: "Network", outage: int):
        self.net = net
        self.outage = outage
        self.failed = False

    def on_failure(self, target: str, now: int) -> None:
        if target in self.net.path_elements[self.net.anchor]:
            self.net.engine.timer(self.name, now + self.outage, ("reanchor",))

    def on_timer(self, token: Any, now: int) -> None:
        net = self.net
        for i in range(len(net.paths)):
            if all(net.engine.is_up(e) for e in net.path_elements[i]):
                if i != net.anchor:
                    net.engine.metrics.record(now, "reanchor", net.anchor, i)
                net.anchor = i
                return

    def receive(self, packet, link, now):  # pragma: no cover - never linked
        raise AssertionError("failover controller has no links")


def gtpu_encapsulate(packet: Packet, teid: int) -> Packet:
    return push_header(packet, GtpuHeader(teid=teid, length=packet.wire_size))


class Network:
    """Builds a template's nodes and links on an engine and owns shared state
    (sequence generators, elimination states, sink logs)."""

    def __init__(
        self,
        engine: Engine,
        template: TopologyTemplate,
        paths: List[PathSpec],
        flows: List[FlowSpec],
        link_params: Dict[str, Dict[str, Any]],
        preof: Optional[PreofConfig] = None,
        baseline_outage: Optional[int] = None,
        baseline_anchor: int = 0,
    ):
        if len(paths) < 1:
            raise ConfigurationError("at least one member path is required")
        if template.path_count != len(paths):
            raise ConfigurationError("template path_count does not match the declared paths")
        self.engine = engine
        self.template = template
        self.paths = paths
        self.flows: Dict[FlowId, FlowSpec] = {f.flow: f for f in flows}
        self.preof = preof or PreofConfig()
        self.baseline = baseline_outage is not None
        self.anchor = baseline_anchor
        self.ues = list(dict.fromkeys(f.ue for f in flows))
        downlink_ues = list(
            dict.fromkeys(f.ue for f in flows if f.flow.direction is Direction.DOWNLINK)
        )
        self.generators: Dict[FlowId, SequenceGenerator] = {}
        self.pef: Dict[Tuple[str, FlowId], FlowEliminationState] = {}
        self.logs: Dict[FlowId, FlowLog] = {f.flow: FlowLog() for f in flows}
        self.ue_ran_teid = {ue: ran_teid(i) for i, ue in enumerate(self.ues)}
        self.ran_sessions = {teid: ue for ue, teid in self.ue_ran_teid.items()}

        self._ids: Dict[int, str] = {}
        for name, role in template_nodes(template, paths, self.ues, downlink_ues):
            node = self._make_node(name, role)
            node.node_id = len(self._ids) + 1
            self._ids[node.node_id] = name
            engine.add_node(node)
        self.slots = template_links(template, paths, self.ues, downlink_ues)
        for slot in self.slots:
            params = link_params.get(slot.id, {})
            engine.add_link(Link(slot.id, (slot.a, slot.b), is_wireless=slot.wireless, **params))

        sessions = [
            SessionEntry(
                teid=uplink_teid(f.flow, i),
                ue=f.ue,
                dn_next_hop=PTE,
                ran_teid=self.ue_ran_teid[f.ue],
                qos_priority=classify_dscp(f.dscp),
            )
            for f in flows
            for i in range(len(paths))
        ]
        sessions += [
            SessionEntry(teid=t, ue=ue, dn_next_hop=PTE, ran_teid=t)
            for ue, t in self.ue_ran_teid.items()
        ]
        for p in paths:
            self.engine.nodes[p.upf].provision(sessions)

        present = set(engine.nodes) | set(engine.links)
        self.path_elements = [
            set(path_elements(template, paths, self.ues, i)) & present
            for i in range(len(paths))
        ]
        if self.baseline:
            ctl = FailoverController(self, baseline_outage)
            engine.nodes[FAILOVER] = ctl
            engine.on_failure.append(ctl.on_failure)

    def _make_node(self, name: str, role: Role) -> BaseNode:
        if role is Role.UE:
            return UENode(name, self)
        if role is Role.GNB:
            idx = next((i for i, p in enumerate(self.paths) if p.gnb == name), None)
            return GNBNode(name, self, idx)
        if role is Role.PTI:
            return PTINode(name, self)
        if role is Role.UPF:
            i = next(i for i, p in enumerate(self.paths) if p.upf == name)
            if self.template.variant is Variant.PTI_IN_UE:
                ran = self.paths[i].gnb
            else:
                ran = PTI if self.template.co_located_pti else GNB
            return UPFNode(name, self, i, ran)
        if role is Role.PTE:
            return PTENode(name, self)
        if role is Role.PTE_O:
            return PTEONode(name, self, name[len("pteo-"):])
        return DNEdgeNode(name, self)

    def node_name(self, node_id: int) -> Optional[str]:
        return self._ids.get(node_id)

    def node_id(self, name: str) -> int:
        return self.engine.nodes[name].node_id

    def generator(self, flow: FlowId) -> SequenceGenerator:
        gen = self.generators.get(flow)
        if gen is None:
            gen = self.generators[flow] = SequenceGenerator(flow, self.preof.seq_start)
        return gen

    def replicate(self, packet: Packet, gen: SequenceGenerator, pte: str) -> List[Packet]:
        return [p for _, p in pref_replicate(packet, gen, range(len(self.paths)), self.node_id(pte))]

    def elimination_state(self, node: str, flow: FlowId) -> FlowEliminationState:
        key = (node, flow)
        s = self.pef.get(key)
        if s is None:
            s = self.pef[key] = FlowEliminationState(flow=flow, window=self.preof.window)
        return s

    def path_delay(self, spec: FlowSpec, i: int, worst: bool = False) -> int:
        total = 0
        for lid in member_path_links(self.template, self.paths, spec, i):
            link = self.engine.links[lid]
            total += link.one_way_delay + (link.jitter if worst else 0)
        return total

    def pof_timeout(self, flow: FlowId) -> int:
        if self.preof.pof_timeout is not None:
            return self.preof.pof_timeout
        spec = self.flows[flow]
        n = len(self.paths)
        slowest = max(self.path_delay(spec, i, worst=True) for i in range(n))
        fastest = min(self.path_delay(spec, i) for i in range(n))
        return max(1, 2 * (slowest - fastest))

    def proxy_expose_inner(self, upf: UPFNode, packet: Packet) -> Packet:
        """Detach the protection header, let the UPF classifier see the UE's
        DSCP, and re-attach the identical header."""
        if not isinstance(packet.outermost, ProtectionHeader):
            return packet
        h, inner = pop_header(packet, ProtectionHeader)
        priority = classify_dscp(inner.inner_dscp)
        upf.count(packet, f"class_{priority}")
        upf.count(packet, "proxy_traversals")
        self.engine.metrics.record(self.engine.now, "classify", upf.name, packet.payload_id, priority)
        return push_header(inner, h)

    def schedule_traffic(self) -> None:
        for spec in self.flows.values():
            if spec.count <= 0:
                continue
            source = spec.ue if spec.flow.direction is Direction.UPLINK else DN
            self.engine.timer(source, spec.start, ("send", spec, 0))

    def deliver(self, packet: Packet, now: int) -> None:
        metrics = self.engine.metrics
        if packet.header_stack or header_balance(packet) != 0:
            metrics.count(packet.flow, "header_violations")
        log = self.logs[packet.flow]
        index = packet.payload_id & 0xFFFFFFFF
        if index < log.max_index:
            log.out_of_order += 1
        log.max_index = max(log.max_index, index)
        log.latencies.append(now - packet.created_at)
        log.delivered_ids.append(packet.payload_id)
        metrics.count(packet.flow, "delivered")
        metrics.record(now, "deliver", packet.flow, packet.payload_id)

    def close_ordering(self) -> None:
        """Flow teardown at the ordering servers: account trailing holes."""
        if not self.template.ordering_offload or self.baseline:
            return
        for flow, gen in self.generators.items():
            spec = self.flows[flow]
            if flow.direction is Direction.UPLINK:
                pte = PTE
            else:
                pte = downlink_pte(self.template, spec.ue)
            node = self.engine.nodes.get(pteo_name(pte))
            if node is not None:
                node.close(flow, gen.next)

    def buffered(self, flow: FlowId) -> int:
        return sum(
            len(n.buffers[flow])
            for n in self.engine.nodes.values()
            if isinstance(n, PTEONode) and flow in n.buffers
        )
