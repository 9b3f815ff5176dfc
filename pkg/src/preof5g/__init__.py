"""Packet-level 1+1 protection (replication, elimination, ordering) for the
5G user plane, with a deterministic discrete-event simulator to exercise it."""

from .codec import (
    Direction,
    FlowId,
    GtpuHeader,
    Packet,
    ProtectionHeader,
    decode_gtpu,
    decode_protection,
    encode_gtpu,
    encode_protection,
)
from .preof import (
    FlowEliminationState,
    ReorderBuffer,
    SequenceGenerator,
    Verdict,
    pef_accept,
    pof_expire,
    pof_submit,
    pref_replicate,
    seq_less,
)
from .report import SimulationReport, compare, emit_report
from .scenario import Scenario, ScenarioError, dump_scenario, parse_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Direction",
    "FlowId",
    "GtpuHeader",
    "Packet",
    "ProtectionHeader",
    "decode_gtpu",
    "decode_protection",
    "encode_gtpu",
    "encode_protection",
    "FlowEliminationState",
    "ReorderBuffer",
    "SequenceGenerator",
    "Verdict",
    "pef_accept",
    "pof_expire",
    "pof_submit",
    "pref_replicate",
    "seq_less",
    "SimulationReport",
    "compare",
    "emit_report",
    "Scenario",
    "ScenarioError",
    "dump_scenario",
    "parse_scenario",
    "run_scenario",
]
