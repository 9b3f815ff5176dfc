"""Simulation reports: aggregation, rendering and paired-run comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple, Union

REPORT_HEADER = "# preof5g report v1"

# Counters copied straight from the engine's per-flow metrics.
COUNTERS = (
    "sent",
    "delivered",
    "replicas",
    "pef_accepted",
    "duplicates_eliminated",
    "stale_drops",
    "late_drops",
    "gaps_skipped",
    "loss_drops",
    "down_drops",
    "node_drops",
    "malformed_drops",
    "session_miss_drops",
    "misroute_drops",
    "no_route_drops",
    "header_violations",
    "wireless_bytes",
    "wireless_wire_bytes",
    "proxy_traversals",
    "class_high",
    "class_medium",
    "class_default",
)

# Every way a packet copy can stop existing short of delivery.
COPY_DROPS = (
    "loss_drops",
    "down_drops",
    "node_drops",
    "malformed_drops",
    "session_miss_drops",
    "misroute_drops",
    "no_route_drops",
    "duplicates_eliminated",
    "stale_drops",
    "late_drops",
)

FLOW_METRICS = (
    COUNTERS[:2]
    + ("lost", "out_of_order_deliveries", "buffered_peak", "residual")
    + COUNTERS[2:]
    + ("latency_count", "latency_sum", "latency_min", "latency_mean", "latency_p99", "latency_max")
)

LINK_METRICS = ("bytes", "packets", "loss_drops", "down_drops")


class ComparisonError(ValueError):
    pass


def percentile(values: List[int], q: float) -> int:
    """Nearest-rank percentile of an already sorted list."""
    if not values:
        return 0
    rank = max(1, math.ceil(q * len(values)))
    return values[rank - 1]


@dataclass
class FlowReport:
    flow: str
    counters: Dict[str, int] = field(default_factory=dict)
    latencies: List[int] = field(default_factory=list, repr=False)
    delivered_ids: List[int] = field(default_factory=list, repr=False)
    out_of_order: int = 0
    buffered_peak: int = 0
    residual: int = 0

    def __getitem__(self, name: str) -> Any:
        return self.metrics()[name]

    @property
    def copies(self) -> int:
        return self.counters.get("sent", 0) + self.counters.get("replicas", 0)

    def metrics(self) -> Dict[str, Any]:
        c = self.counters
        lat = sorted(self.latencies)
        n = len(lat)
        out: Dict[str, Any] = {}
        for name in FLOW_METRICS:
            if name == "lost":
                out[name] = c.get("sent", 0) - c.get("delivered", 0)
            elif name == "out_of_order_deliveries":
                out[name] = self.out_of_order
            elif name == "buffered_peak":
                out[name] = self.buffered_peak
            elif name == "residual":
                out[name] = self.residual
            elif name == "latency_count":
                out[name] = n
            elif name == "latency_sum":
                out[name] = sum(lat)
            elif name == "latency_min":
                out[name] = lat[0] if n else 0
            elif name == "latency_mean":
                out[name] = sum(lat) / n if n else 0.0
            elif name == "latency_p99":
                out[name] = percentile(lat, 0.99)
            elif name == "latency_max":
                out[name] = lat[-1] if n else 0
            else:
                out[name] = c.get(name, 0)
        return out

    def audit(self) -> List[str]:
        """Conservation checks; an empty list means the books balance."""
        problems = []
        c = self.counters
        terminal = c.get("delivered", 0) + sum(c.get(k, 0) for k in COPY_DROPS) + self.residual
        if self.copies != terminal:
            problems.append(
                f"flow {self.flow}: {self.copies} copies created but {terminal} accounted for"
            )
        if len(set(self.delivered_ids)) != len(self.delivered_ids):
            problems.append(f"flow {self.flow}: a payload was delivered twice")
        if c.get("header_violations", 0):
            problems.append(f"flow {self.flow}: unbalanced header stack at delivery")
        return problems


@dataclass
class SimulationReport:
    name: str = ""
    seed: int = 0
    flows: Dict[str, FlowReport] = field(default_factory=dict)
    links: Dict[str, Dict[str, int]] = field(default_factory=dict)
    end_time: int = 0
    events: int = 0
    pending: int = 0
    wall_time: float = 0.0
    trace: List[Tuple[Any, ...]] = field(default_factory=list, repr=False)

    def flow(self, key: str) -> FlowReport:
        return self.flows[key]

    def metrics(self) -> Dict[str, Any]:
        """Flat, stably ordered metric map (the machine-readable view)."""
        out: Dict[str, Any] = {}
        for key in self.flows:
            for name, value in self.flows[key].metrics().items():
                out[f"flow.{key}.{name}"] = value
        for lid in sorted(self.links):
            for name in LINK_METRICS:
                out[f"link.{lid}.{name}"] = self.links[lid].get(name, 0)
        return out

    def audit(self) -> List[str]:
        problems: List[str] = []
        for f in self.flows.values():
            problems.extend(f.audit())
        return problems


def _format_value(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def emit_report(r: SimulationReport, format: str = "kv") -> str:
    if format == "kv":
        lines = [
            REPORT_HEADER,
            f"# name={r.name} seed={r.seed} end_us={r.end_time} events={r.events} pending={r.pending}",
        ]
        lines += [f"{k}={_format_value(v)}" for k, v in r.metrics().items()]
        return "\n".join(lines) + "\n"
    if format == "table":
        return _table(r)
    raise ValueError(f"unknown report format {format!r}")


_TABLE_COLUMNS = (
    ("sent", "sent"),
    ("delivered", "dlvd"),
    ("lost", "lost"),
    ("duplicates_eliminated", "dup"),
    ("stale_drops", "stale"),
    ("late_drops", "late"),
    ("gaps_skipped", "gaps"),
    ("out_of_order_deliveries", "ooo"),
    ("wireless_bytes", "wl_bytes"),
    ("latency_min", "lat_min"),
    ("latency_mean", "lat_mean"),
    ("latency_p99", "lat_p99"),
    ("latency_max", "lat_max"),
)


def _table(r: SimulationReport) -> str:
    out = [
        f"scenario {r.name}  seed={r.seed}  simulated={r.end_time}us  "
        f"events={r.events}  wall={r.wall_time:.3f}s"
    ]
    if not r.flows and not r.links:
        return "\n".join(out) + "\n"
    header = ["flow"] + [label for _, label in _TABLE_COLUMNS]
    rows = [header]
    for key, f in r.flows.items():
        m = f.metrics()
        rows.append([key] + [_format_value(m[name]) for name, _ in _TABLE_COLUMNS])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    for row in rows:
        out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    drops = []
    for key, f in r.flows.items():
        c = f.counters
        parts = [f"{k}={c[k]}" for k in COPY_DROPS if c.get(k)]
        klass = [f"{k[6:]}={c[k]}" for k in ("class_high", "class_medium", "class_default") if c.get(k)]
        if parts or klass:
            drops.append(f"  {key}: " + " ".join(parts + klass))
    if drops:
        out.append("drops/classification:")
        out.extend(drops)
    out.append("links:")
    for lid in sorted(r.links):
        l = r.links[lid]
        out.append(
            f"  {lid}: bytes={l['bytes']} packets={l['packets']} "
            f"loss={l['loss_drops']} down={l['down_drops']}"
        )
    return "\n".join(out) + "\n"


def parse_report(text: str) -> Dict[str, Union[int, float, str]]:
    """Inverse of the kv rendering (comment lines are skipped)."""
    out: Dict[str, Union[int, float, str]] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key=value")
        key, value = line.split("=", 1)
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    return out


Reportish = Union[SimulationReport, Mapping[str, Any]]


def _as_metrics(r: Reportish) -> Mapping[str, Any]:
    return r.metrics() if isinstance(r, SimulationReport) else r


def _flow_keys(m: Mapping[str, Any]) -> set:
    return {k.split(".")[1] for k in m if k.startswith("flow.")}


def compare(a: Reportish, b: Reportish) -> Dict[str, Union[int, float]]:
    """Per-metric deltas ``b - a`` over the numeric metrics both runs share."""
    ma, mb = _as_metrics(a), _as_metrics(b)
    if _flow_keys(ma) != _flow_keys(mb):
        raise ComparisonError(
            f"flow sets differ: {sorted(_flow_keys(ma))} vs {sorted(_flow_keys(mb))}"
        )
    deltas: Dict[str, Union[int, float]] = {}
    for key in ma:
        if key not in mb:
            continue
        va, vb = ma[key], mb[key]
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            deltas[key] = vb - va
    return deltas


def format_comparison(deltas: Mapping[str, Union[int, float]], changed_only: bool = True) -> str:
    lines = ["# delta = b - a"]
    for key, d in deltas.items():
        if changed_only and d == 0:
            continue
        sign = "+" if d > 0 else ""
        lines.append(f"{key}={sign}{_format_value(d)}")
    return "\n".join(lines) + "\n"
