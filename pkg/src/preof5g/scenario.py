"""Scenario files: parsing, validation, canonical dumping and execution.

A scenario file is line oriented. ``[section]`` headers open a block of
``key = value`` lines; ``#`` starts a comment. Sections::

    [scenario]        name, variant, paths, co_located_pti, proxy, proxy_delay_us,
                      ordering_offload, seed, baseline, baseline_outage_us,
                      baseline_anchor, duration_us
    [preof]           window, pof_timeout_us (int or auto), pof_capacity, seq_start
    [path NAME]       upf, gnb (pti_in_ue only)        one per member path
    [link ID]         delay_us, jitter_us, loss        ID "*" sets defaults
    [flow N]          ue, direction, count, gap_us, payload_len, dscp, start_us
    [failure]         target, at_us, repair_us         repeatable
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .codec import SEQ_MODULUS, Direction, FlowId
from .netsim import Engine, FailureSpec
from .nodes import (
    DN,
    GNB,
    PTE,
    PTI,
    FlowSpec,
    Network,
    PathSpec,
    PreofConfig,
    TopologyTemplate,
    Variant,
    template_links,
    template_nodes,
)
from .report import FlowReport, SimulationReport

RESERVED_NAMES = {GNB, PTI, PTE, DN, "*"}
MAX_PAYLOAD = 0xFFFF - 8 - 12


class ScenarioError(Exception):
    """Validation failure carrying every problem found, each tagged with a line."""

    def __init__(self, errors: List[Tuple[int, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {n}: {msg}" if n else msg for n, msg in errors))


@dataclass
class LinkParams:
    delay_us: int = 100
    jitter_us: int = 0
    loss: float = 0.0

    def as_kwargs(self) -> dict:
        return {"one_way_delay": self.delay_us, "jitter": self.jitter_us, "loss_prob": self.loss}


@dataclass
class Scenario:
    name: str = "scenario"
    template: TopologyTemplate = field(default_factory=TopologyTemplate)
    paths: List[PathSpec] = field(default_factory=list)
    links: Dict[str, LinkParams] = field(default_factory=dict)
    link_default: Optional[LinkParams] = None
    flows: List[FlowSpec] = field(default_factory=list)
    failures: List[FailureSpec] = field(default_factory=list)
    seed: int = 0
    preof: PreofConfig = field(default_factory=PreofConfig)
    baseline_outage: Optional[int] = None
    baseline_anchor: Optional[str] = None
    duration: Optional[int] = None

    @property
    def ues(self) -> List[str]:
        return list(dict.fromkeys(f.ue for f in self.flows))

    @property
    def downlink_ues(self) -> List[str]:
        return list(
            dict.fromkeys(f.ue for f in self.flows if f.flow.direction is Direction.DOWNLINK)
        )

    def link_slots(self):
        return template_links(self.template, self.paths, self.ues, self.downlink_ues)

    def node_names(self) -> List[str]:
        return [n for n, _ in template_nodes(self.template, self.paths, self.ues, self.downlink_ues)]

    def resolved_links(self) -> Dict[str, LinkParams]:
        out = {}
        for slot in self.link_slots():
            params = self.links.get(slot.id, self.link_default)
            if params is not None:
                out[slot.id] = params
        return out

    def anchor_index(self) -> int:
        if self.baseline_anchor is None:
            return 0
        return [p.name for p in self.paths].index(self.baseline_anchor)


_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}

_KEYS = {
    "scenario": {
        "name", "variant", "paths", "co_located_pti", "proxy", "proxy_delay_us",
        "ordering_offload", "seed", "baseline", "baseline_outage_us", "baseline_anchor",
        "duration_us",
    },
    "preof": {"window", "pof_timeout_us", "pof_capacity", "seq_start"},
    "path": {"upf", "gnb"},
    "link": {"delay_us", "jitter_us", "loss"},
    "flow": {"ue", "direction", "count", "gap_us", "payload_len", "dscp", "start_us"},
    "failure": {"target", "at_us", "repair_us"},
}


class _Section:
    def __init__(self, kind: str, arg: Optional[str], line: int):
        self.kind = kind
        self.arg = arg
        self.line = line
        self.values: Dict[str, Tuple[str, int]] = {}


class _Reader:
    """Typed access to one section's values with positioned error collection."""

    def __init__(self, section: _Section, errors: List[Tuple[int, str]]):
        self.s = section
        self.errors = errors

    def _raw(self, key):
        return self.s.values.get(key)

    def has(self, key) -> bool:
        return key in self.s.values

    def str(self, key, default=None, required=False):
        raw = self._raw(key)
        if raw is None:
            if required:
                self.errors.append((self.s.line, f"[{self.s.kind}] missing required key {key!r}"))
            return default
        return raw[0]

    def int(self, key, default=None, required=False, lo=None, hi=None):
        raw = self._raw(key)
        if raw is None:
            if required:
                self.errors.append((self.s.line, f"[{self.s.kind}] missing required key {key!r}"))
            return default
        text, line = raw
        try:
            value = int(text, 0)
        except ValueError:
            self.errors.append((line, f"{key}: expected an integer, got {text!r}"))
            return default
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            self.errors.append((line, f"{key}={value} out of range [{lo}, {hi}]"))
            return default
        return value

    def float(self, key, default=None, lo=None, hi=None):
        raw = self._raw(key)
        if raw is None:
            return default
        text, line = raw
        try:
            value = float(text)
        except ValueError:
            self.errors.append((line, f"{key}: expected a number, got {text!r}"))
            return default
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            self.errors.append((line, f"{key}={value} out of range [{lo}, {hi}]"))
            return default
        return value

    def bool(self, key, default=False):
        raw = self._raw(key)
        if raw is None:
            return default
        text, line = raw
        if text.lower() not in _BOOL:
            self.errors.append((line, f"{key}: expected on/off, got {text!r}"))
            return default
        return _BOOL[text.lower()]

    def choice(self, key, options, default):
        raw = self._raw(key)
        if raw is None:
            return default
        text, line = raw
        if text not in options:
            self.errors.append((line, f"{key}: expected one of {sorted(options)}, got {text!r}"))
            return default
        return text

    def line(self, key) -> int:
        raw = self._raw(key)
        return raw[1] if raw else self.s.line


def _tokenize(text: str, errors: List[Tuple[int, str]]) -> List[_Section]:
    sections: List[_Section] = []
    current: Optional[_Section] = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append((n, f"unterminated section header {line!r}"))
                current = None
                continue
            parts = line[1:-1].split(None, 1)
            kind = parts[0] if parts else ""
            arg = parts[1].strip() if len(parts) > 1 else None
            if kind not in _KEYS:
                errors.append((n, f"unknown section [{kind}]"))
                current = None
                continue
            needs_arg = kind in ("path", "link", "flow")
            if needs_arg and not arg:
                errors.append((n, f"[{kind}] needs a name"))
            elif not needs_arg and arg:
                errors.append((n, f"[{kind}] takes no name"))
            current = _Section(kind, arg, n)
            sections.append(current)
            continue
        if "=" not in line:
            errors.append((n, f"expected key = value, got {line!r}"))
            continue
        if current is None:
            errors.append((n, "key outside of any section"))
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS[current.kind]:
            errors.append((n, f"unknown key {key!r} in [{current.kind}]"))
            continue
        if key in current.values:
            errors.append((n, f"duplicate key {key!r}"))
            continue
        current.values[key] = (value, n)
    return sections


def parse_scenario(text: str) -> Scenario:
    """Parse and validate; raises ScenarioError listing every problem found."""
    errors: List[Tuple[int, str]] = []
    sections = _tokenize(text, errors)
    s = Scenario()

    singles = {}
    for sec in sections:
        if sec.kind in ("scenario", "preof"):
            if sec.kind in singles:
                errors.append((sec.line, f"duplicate [{sec.kind}] section"))
            singles[sec.kind] = sec
    if "scenario" not in singles:
        errors.append((0, "missing [scenario] section"))
        raise ScenarioError(errors)

    r = _Reader(singles["scenario"], errors)
    s.name = r.str("name", "scenario")
    variant = Variant(r.choice("variant", {v.value for v in Variant}, Variant.PTI_IN_GNB.value))
    declared_paths = r.int("paths", None, lo=1)
    co_located = r.bool("co_located_pti")
    if co_located and variant is not Variant.PTI_IN_GNB:
        errors.append((r.line("co_located_pti"), "co_located_pti requires variant pti_in_gnb"))
        co_located = False
    proxy = r.bool("proxy")
    proxy_delay = r.int("proxy_delay_us", 0, lo=0)
    offload = r.bool("ordering_offload")
    s.seed = r.int("seed", 0, lo=0, hi=2**64 - 1)
    baseline = r.choice("baseline", {"off", "failover"}, "off")
    outage = r.int("baseline_outage_us", None, lo=0)
    if baseline == "failover":
        if outage is None:
            errors.append((r.line("baseline"), "baseline = failover needs baseline_outage_us"))
            outage = 0
        s.baseline_outage = outage
    elif r.has("baseline_outage_us"):
        errors.append((r.line("baseline_outage_us"), "baseline_outage_us set but baseline is off"))
    s.baseline_anchor = r.str("baseline_anchor")
    s.duration = r.int("duration_us", None, lo=0)

    if "preof" in singles:
        r = _Reader(singles["preof"], errors)
        timeout_text = r.str("pof_timeout_us", "auto")
        if timeout_text == "auto":
            timeout = None
        else:
            timeout = r.int("pof_timeout_us", None, lo=0)
        s.preof = PreofConfig(
            window=r.int("window", 128, lo=1, hi=1 << 20),
            pof_timeout=timeout,
            pof_capacity=r.int("pof_capacity", 1024, lo=1),
            seq_start=r.int("seq_start", 0, lo=0, hi=SEQ_MODULUS - 1),
        )

    seen_nodes: Dict[str, int] = {}
    for sec in (x for x in sections if x.kind == "path"):
        r = _Reader(sec, errors)
        upf = r.str("upf", required=True)
        gnb = r.str("gnb")
        if variant is Variant.PTI_IN_UE and gnb is None:
            errors.append((sec.line, f"[path {sec.arg}] needs a gnb in the pti_in_ue template"))
        if variant is Variant.PTI_IN_GNB and gnb is not None:
            errors.append((r.line("gnb"), "per-path gnb only exists in the pti_in_ue template"))
            gnb = None
        if sec.arg in (p.name for p in s.paths):
            errors.append((sec.line, f"duplicate path {sec.arg!r}"))
        for role, name in (("upf", upf), ("gnb", gnb)):
            if name is None:
                continue
            if name in RESERVED_NAMES or name.startswith("pteo-"):
                errors.append((r.line(role), f"node name {name!r} is reserved"))
            elif name in seen_nodes:
                errors.append(
                    (r.line(role), f"paths are not disjoint: {name} already used on line {seen_nodes[name]}")
                )
            else:
                seen_nodes[name] = r.line(role)
        if upf is not None:
            s.paths.append(PathSpec(sec.arg or "", upf, gnb))
    if not s.paths:
        errors.append((0, "at least one [path] section is required"))
    if declared_paths is not None and declared_paths != len(s.paths):
        errors.append((singles["scenario"].line, f"paths = {declared_paths} but {len(s.paths)} [path] sections"))

    s.template = TopologyTemplate(
        variant=variant,
        path_count=len(s.paths),
        proxy_enabled=proxy,
        ordering_offload=offload,
        co_located_pti=co_located,
        proxy_delay=proxy_delay,
    )
    if s.baseline_anchor is not None and s.baseline_anchor not in [p.name for p in s.paths]:
        errors.append((0, f"baseline_anchor {s.baseline_anchor!r} is not a declared path"))

    link_lines: Dict[str, int] = {}
    for sec in (x for x in sections if x.kind == "link"):
        r = _Reader(sec, errors)
        params = LinkParams(
            delay_us=r.int("delay_us", 100, lo=0),
            jitter_us=r.int("jitter_us", 0, lo=0),
            loss=r.float("loss", 0.0, lo=0.0, hi=1.0),
        )
        if params.delay_us + params.jitter_us <= 0:
            errors.append((sec.line, f"link {sec.arg}: delay_us + jitter_us must be positive"))
        if sec.arg == "*":
            s.link_default = params
        elif sec.arg in s.links:
            errors.append((sec.line, f"duplicate link section {sec.arg!r}"))
        else:
            s.links[sec.arg] = params
            link_lines[sec.arg] = sec.line

    flow_keys = set()
    ue_dirs = set()
    for sec in (x for x in sections if x.kind == "flow"):
        r = _Reader(sec, errors)
        try:
            value = int(sec.arg or "", 0)
            if not 0 <= value < 1 << 24:
                raise ValueError
        except ValueError:
            errors.append((sec.line, f"flow id {sec.arg!r} is not a 24-bit integer"))
            continue
        direction = Direction(r.choice("direction", {"uplink", "downlink"}, "uplink"))
        ue = r.str("ue", required=True)
        if ue is None:
            continue
        if ue in RESERVED_NAMES or ue in seen_nodes or ue.startswith("pteo-"):
            errors.append((r.line("ue"), f"UE name {ue!r} collides with another node"))
        fid = FlowId(value, direction)
        if (value, direction) in flow_keys:
            errors.append((sec.line, f"duplicate flow {value} {direction.value}"))
        if (ue, direction) in ue_dirs:
            errors.append((sec.line, f"UE {ue} already has a {direction.value} flow"))
        flow_keys.add((value, direction))
        ue_dirs.add((ue, direction))
        s.flows.append(
            FlowSpec(
                flow=fid,
                ue=ue,
                count=r.int("count", 0, required=True, lo=0, hi=2**32 - 1),
                gap=r.int("gap_us", 1000, lo=1),
                payload_len=r.int("payload_len", 1000, lo=1, hi=MAX_PAYLOAD),
                dscp=r.int("dscp", 0, lo=0, hi=63),
                start=r.int("start_us", 0, lo=0),
            )
        )

    slot_ids = [slot.id for slot in s.link_slots()] if s.paths else []
    for lid, n in link_lines.items():
        if lid not in slot_ids:
            errors.append((n, f"link {lid!r} is not part of this topology"))
    if s.paths and s.link_default is None:
        for lid in slot_ids:
            if lid not in s.links:
                errors.append((0, f"link {lid} has no parameters (add [link {lid}] or [link *])"))

    names = set(s.node_names()) | set(slot_ids) if s.paths else set()
    for sec in (x for x in sections if x.kind == "failure"):
        r = _Reader(sec, errors)
        target = r.str("target", required=True)
        at = r.int("at_us", None, required=True, lo=0)
        repair = r.int("repair_us", None, lo=0)
        if target is None or at is None:
            continue
        if target not in names:
            errors.append((r.line("target"), f"failure target {target!r} is not a node or link"))
        if repair is not None and repair <= at:
            errors.append((r.line("repair_us"), f"repair_us={repair} is not after at_us={at}"))
            continue
        s.failures.append(FailureSpec(target, at, repair))

    if errors:
        raise ScenarioError(errors)
    return s


def _fmt_bool(b: bool) -> str:
    return "on" if b else "off"


def dump_scenario(s: Scenario) -> str:
    """Canonical text form; parse_scenario(dump_scenario(s)) reproduces s."""
    t = s.template
    lines = [
        "[scenario]",
        f"name = {s.name}",
        f"variant = {t.variant.value}",
        f"paths = {len(s.paths)}",
        f"co_located_pti = {_fmt_bool(t.co_located_pti)}",
        f"proxy = {_fmt_bool(t.proxy_enabled)}",
        f"proxy_delay_us = {t.proxy_delay}",
        f"ordering_offload = {_fmt_bool(t.ordering_offload)}",
        f"seed = {s.seed}",
        f"baseline = {'off' if s.baseline_outage is None else 'failover'}",
    ]
    if s.baseline_outage is not None:
        lines.append(f"baseline_outage_us = {s.baseline_outage}")
    if s.baseline_anchor is not None:
        lines.append(f"baseline_anchor = {s.baseline_anchor}")
    if s.duration is not None:
        lines.append(f"duration_us = {s.duration}")
    p = s.preof
    lines += [
        "",
        "[preof]",
        f"window = {p.window}",
        f"pof_timeout_us = {'auto' if p.pof_timeout is None else p.pof_timeout}",
        f"pof_capacity = {p.pof_capacity}",
        f"seq_start = {p.seq_start}",
    ]
    for path in s.paths:
        lines += ["", f"[path {path.name}]", f"upf = {path.upf}"]
        if path.gnb is not None:
            lines.append(f"gnb = {path.gnb}")
    links = ([("*", s.link_default)] if s.link_default else []) + list(s.links.items())
    for lid, lp in links:
        lines += [
            "",
            f"[link {lid}]",
            f"delay_us = {lp.delay_us}",
            f"jitter_us = {lp.jitter_us}",
            f"loss = {lp.loss!r}",
        ]
    for f in s.flows:
        lines += [
            "",
            f"[flow {f.flow.value}]",
            f"ue = {f.ue}",
            f"direction = {f.flow.direction.value}",
            f"count = {f.count}",
            f"gap_us = {f.gap}",
            f"payload_len = {f.payload_len}",
            f"dscp = {f.dscp}",
            f"start_us = {f.start}",
        ]
    for fs in s.failures:
        lines += ["", "[failure]", f"target = {fs.target}", f"at_us = {fs.at}"]
        if fs.repair_at is not None:
            lines.append(f"repair_us = {fs.repair_at}")
    return "\n".join(lines) + "\n"


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def build(s: Scenario, seed: Optional[int] = None, trace: bool = False) -> Network:
    """Instantiate the scenario on a fresh engine without running it."""
    engine = Engine(seed=s.seed if seed is None else seed, tracing=trace)
    link_params = {lid: lp.as_kwargs() for lid, lp in s.resolved_links().items()}
    net = Network(
        engine,
        s.template,
        s.paths,
        s.flows,
        link_params,
        preof=s.preof,
        baseline_outage=s.baseline_outage,
        baseline_anchor=s.anchor_index(),
    )
    for f in s.failures:
        engine.inject(f)
    net.schedule_traffic()
    return net


def run_scenario(s: Scenario, seed: Optional[int] = None, trace: bool = False) -> SimulationReport:
    started = time.perf_counter()
    net = build(s, seed, trace)
    engine = net.engine
    engine.run(s.duration)
    net.close_ordering()
    summary = engine.run(s.duration)
    return collect_report(s, net, summary, time.perf_counter() - started)


def collect_report(s: Scenario, net: Network, summary, wall_time: float) -> SimulationReport:
    engine = net.engine
    metrics = engine.metrics
    residual: Dict[FlowId, int] = {}
    for p in engine.pending_packets():
        residual[p.flow] = residual.get(p.flow, 0) + 1
    peaks: Dict[FlowId, int] = {}
    for node in engine.nodes.values():
        for flow, rb in getattr(node, "buffers", {}).items():
            peaks[flow] = max(peaks.get(flow, 0), rb.buffered_peak)

    report = SimulationReport(
        name=s.name,
        seed=engine.seed,
        end_time=summary.end_time,
        events=summary.events,
        pending=summary.pending,
        wall_time=wall_time,
        trace=metrics.trace,
    )
    for spec in sorted(s.flows, key=lambda f: f.flow.sort_key()):
        flow = spec.flow
        log = net.logs[flow]
        report.flows[str(flow)] = FlowReport(
            flow=str(flow),
            counters=dict(metrics.counters.get(flow, {})),
            latencies=list(log.latencies),
            delivered_ids=list(log.delivered_ids),
            out_of_order=log.out_of_order,
            buffered_peak=peaks.get(flow, 0),
            residual=residual.get(flow, 0) + net.buffered(flow),
        )
    for lid, link in engine.links.items():
        report.links[lid] = {
            "bytes": link.bytes_carried,
            "packets": link.packets,
            "loss_drops": link.loss_drops,
            "down_drops": link.down_drops,
        }
    return report
