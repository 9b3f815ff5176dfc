"""Replication, elimination and ordering functions over 28-bit sequence numbers.

Nothing here knows about the simulator: the state machines take sequence
numbers and opaque items and return decisions, so they can be driven from
tests, traces or the node models alike.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

from .codec import SEQ_MODULUS, FlowId, Packet, ProtectionHeader, push_header

HALF = SEQ_MODULUS >> 1
DEFAULT_WINDOW = 128
DEFAULT_CAPACITY = 1024


class ConfigurationError(ValueError):
    pass


def seq_add(a: int, n: int) -> int:
    return (a + n) % SEQ_MODULUS


def seq_distance(a: int, b: int) -> int:
    """Forward distance from ``a`` to ``b`` modulo 2^28."""
    return (b - a) % SEQ_MODULUS


def seq_less(a: int, b: int) -> bool:
    """Serial-number order.

    ``a < b`` iff the forward distance from a to b lies in (0, 2^27]. The
    upper bound is inclusive as a tie-break, so at exactly half the space
    both seq_less(a, b) and seq_less(b, a) hold.
    """
    return 0 < (b - a) % SEQ_MODULUS <= HALF


class SequenceGenerator:
    def __init__(self, flow: FlowId, start: int = 0):
        if not 0 <= start < SEQ_MODULUS:
            raise ConfigurationError(f"sequence start {start} outside the 28-bit space")
        self.flow = flow
        self.next = start
        self.issued = 0

    def take(self) -> int:
        seq = self.next
        self.next = seq_add(seq, 1)
        self.issued += 1
        return seq


def pref_replicate(
    p: Packet, gen: SequenceGenerator, paths: Sequence[Hashable], pte: int
) -> List[Tuple[Hashable, Packet]]:
    """Stamp ``p`` with the next sequence number and copy it once per path.

    The generator advances by one no matter how many copies are made. Copy
    ``i`` carries ``copy=i`` so later drops can be attributed to a member path.
    """
    if not paths:
        raise ConfigurationError("replication needs at least one path")
    header = ProtectionHeader(flow_id=p.flow.value, seq=gen.take(), pte_address=pte)
    stamped = push_header(p, header)
    return [(path, replace(stamped, copy=i)) for i, path in enumerate(paths)]


class Verdict(enum.Enum):
    ACCEPT = "accept"
    DUPLICATE = "duplicate"
    STALE = "stale"


@dataclass
class FlowEliminationState:
    """Sliding bitmap of the ``window`` most recent sequence positions.

    Bit ``k`` of ``bitmap`` is set when ``highest - k`` has been seen.
    """

    flow: Optional[FlowId] = None
    window: int = DEFAULT_WINDOW
    highest: int = 0
    bitmap: int = 0
    initialized: bool = False
    accepted: int = 0
    duplicate: int = 0
    stale: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError("elimination window must be at least 1")

    @property
    def window_start(self) -> int:
        return seq_add(self.highest, -(self.window - 1))

    def seen(self, seq: int) -> bool:
        back = seq_distance(seq, self.highest)
        return self.initialized and back < self.window and bool(self.bitmap >> back & 1)


def pef_accept(s: FlowEliminationState, seq: int) -> Verdict:
    if not s.initialized:
        s.initialized = True
        s.highest = seq
        s.bitmap = 1
        s.accepted += 1
        return Verdict.ACCEPT

    ahead = seq_distance(s.highest, seq)
    if ahead == 0:
        s.duplicate += 1
        return Verdict.DUPLICATE
    if ahead <= HALF:
        if ahead >= s.window:
            s.bitmap = 1
        else:
            s.bitmap = ((s.bitmap << ahead) | 1) & ((1 << s.window) - 1)
        s.highest = seq
        s.accepted += 1
        return Verdict.ACCEPT

    back = SEQ_MODULUS - ahead
    if back >= s.window:
        s.stale += 1
        return Verdict.STALE
    bit = 1 << back
    if s.bitmap & bit:
        s.duplicate += 1
        return Verdict.DUPLICATE
    s.bitmap |= bit
    s.accepted += 1
    return Verdict.ACCEPT


@dataclass
class ReorderBuffer:
    """Per-flow ordering function.

    With ``next_expected=None`` the buffer synchronizes on the first item it
    sees. Items are opaque; the caller passes each item's sequence number.
    """

    flow: Optional[FlowId] = None
    next_expected: Optional[int] = 0
    capacity: int = DEFAULT_CAPACITY
    timeout: int = 0
    entries: Dict[int, Tuple[Any, int]] = field(default_factory=dict)
    released: int = 0
    late_drop: int = 0
    gap_skipped: int = 0
    buffered_peak: int = 0
    overflow_flushes: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigurationError("reorder capacity must be at least 1")
        if self.timeout < 0:
            raise ConfigurationError("reorder timeout must be non-negative")

    def __len__(self) -> int:
        return len(self.entries)

    def next_deadline(self) -> Optional[int]:
        if not self.entries:
            return None
        return min(deadline for _, deadline in self.entries.values())

    def _in_serial_order(self) -> List[int]:
        base = self.next_expected
        return sorted(self.entries, key=lambda s: seq_distance(base, s))

    def _drain_run(self, out: List[Any]) -> None:
        while self.next_expected in self.entries:
            item, _ = self.entries.pop(self.next_expected)
            out.append(item)
            self.released += 1
            self.next_expected = seq_add(self.next_expected, 1)

    def _skip_to(self, seq: int) -> None:
        self.gap_skipped += seq_distance(self.next_expected, seq)
        self.next_expected = seq

    def _flush_all(self, out: List[Any]) -> None:
        while self.entries:
            self._skip_to(self._in_serial_order()[0])
            self._drain_run(out)


def pof_submit(rb: ReorderBuffer, seq: int, item: Any, now: int) -> List[Any]:
    """Offer one accepted item; return whatever becomes deliverable in order."""
    if rb.next_expected is None:
        rb.next_expected = seq
    out: List[Any] = []
    if seq == rb.next_expected:
        out.append(item)
        rb.released += 1
        rb.next_expected = seq_add(seq, 1)
        rb._drain_run(out)
        return out
    if not seq_less(rb.next_expected, seq) or seq in rb.entries:
        rb.late_drop += 1
        return out
    rb.entries[seq] = (item, now + rb.timeout)
    if len(rb.entries) > rb.capacity:
        # Overflow: give up on every hole and resynchronize past the newest.
        rb.overflow_flushes += 1
        rb._flush_all(out)
        return out
    rb.buffered_peak = max(rb.buffered_peak, len(rb.entries))
    return out


def pof_expire(rb: ReorderBuffer, now: int) -> List[Any]:
    out: List[Any] = []
    while rb.entries:
        deadline = rb.next_deadline()
        if deadline is None or deadline > now:
            break
        rb._skip_to(rb._in_serial_order()[0])
        rb._drain_run(out)
    return out


def pof_close(rb: ReorderBuffer, end: int) -> List[Any]:
    """End-of-flow teardown: flush everything and account holes before ``end``.

    ``end`` is the first sequence number the ingress never issued.
    """
    out: List[Any] = []
    if rb.next_expected is None:
        return out
    rb._flush_all(out)
    if seq_less(rb.next_expected, end):
        rb._skip_to(end)
    return out
