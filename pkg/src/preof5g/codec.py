"""Wire codecs for the GTP-U and protection headers, and the layered packet model.

All multi-byte fields are big-endian. Headers are immutable; packets are
immutable too, so encapsulation returns a new packet.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Type, Union

SEQ_BITS = 28
SEQ_MODULUS = 1 << SEQ_BITS

GTPU_SIZE = 8
PROTECTION_SIZE = 12

GTPU_VERSION = 1
GTPU_PT = 1
GTPU_G_PDU = 0xFF
PROTECTION_VERSION = 1

_GTPU = struct.Struct(">BBHI")
_PROTECTION = struct.Struct(">III")


class CodecError(Exception):
    """Base class for codec and layering failures."""


class EncodingError(CodecError):
    pass


class MalformedHeaderError(CodecError):
    pass


class LayeringError(CodecError):
    pass


class Direction(enum.Enum):
    UPLINK = "uplink"
    DOWNLINK = "downlink"

    @property
    def short(self) -> str:
        return "up" if self is Direction.UPLINK else "down"


@dataclass(frozen=True)
class FlowId:
    value: int
    direction: Direction = Direction.UPLINK

    def __post_init__(self):
        if not 0 <= self.value < 1 << 24:
            raise ValueError(f"flow id {self.value} does not fit in 24 bits")

    def __str__(self) -> str:
        return f"{self.direction.short}{self.value}"

    def sort_key(self):
        return (self.value, self.direction is Direction.DOWNLINK)


@dataclass(frozen=True)
class GtpuHeader:
    teid: int
    length: int = 0
    version: int = GTPU_VERSION
    pt: int = GTPU_PT
    message_type: int = GTPU_G_PDU

    size = GTPU_SIZE


@dataclass(frozen=True)
class ProtectionHeader:
    flow_id: int
    seq: int
    pte_address: int
    version: int = PROTECTION_VERSION
    flags: int = 0

    size = PROTECTION_SIZE


Header = Union[GtpuHeader, ProtectionHeader]


def _check_range(name: str, value: int, bits: int) -> None:
    if not 0 <= value < 1 << bits:
        raise EncodingError(f"{name}={value} out of range for {bits}-bit field")


def encode_gtpu(h: GtpuHeader) -> bytes:
    _check_range("version", h.version, 3)
    _check_range("pt", h.pt, 1)
    _check_range("message_type", h.message_type, 8)
    _check_range("length", h.length, 16)
    _check_range("teid", h.teid, 32)
    # E, S and PN flags stay zero: no optional fields.
    flags = (h.version << 5) | (h.pt << 4)
    return _GTPU.pack(flags, h.message_type, h.length, h.teid)


def decode_gtpu(b: bytes) -> GtpuHeader:
    """Decode the first 8 bytes of ``b`` as a G-PDU header.

    Raises MalformedHeaderError on short input or any header that is not a
    version-1 GTP G-PDU without optional fields.
    """
    if len(b) < GTPU_SIZE:
        raise MalformedHeaderError(f"GTP-U header needs {GTPU_SIZE} bytes, got {len(b)}")
    flags, message_type, length, teid = _GTPU.unpack_from(b)
    version = flags >> 5
    pt = (flags >> 4) & 1
    if version != GTPU_VERSION:
        raise MalformedHeaderError(f"GTP-U version {version}")
    if pt != GTPU_PT:
        raise MalformedHeaderError("GTP-U protocol type bit is not set")
    if flags & 0x0F:
        raise MalformedHeaderError(f"unsupported GTP-U flags 0x{flags & 0x0F:x}")
    if message_type != GTPU_G_PDU:
        raise MalformedHeaderError(f"GTP-U message type {message_type} is not G-PDU")
    return GtpuHeader(teid=teid, length=length)


def encode_protection(h: ProtectionHeader) -> bytes:
    _check_range("version", h.version, 4)
    _check_range("flags", h.flags, 4)
    _check_range("flow_id", h.flow_id, 24)
    _check_range("seq", h.seq, SEQ_BITS)
    _check_range("pte_address", h.pte_address, 32)
    word0 = (((h.version << 4) | h.flags) << 24) | h.flow_id
    return _PROTECTION.pack(word0, h.seq, h.pte_address)


def decode_protection(b: bytes) -> ProtectionHeader:
    if len(b) < PROTECTION_SIZE:
        raise MalformedHeaderError(
            f"protection header needs {PROTECTION_SIZE} bytes, got {len(b)}"
        )
    word0, seq, pte = _PROTECTION.unpack_from(b)
    version = word0 >> 28
    if version != PROTECTION_VERSION:
        raise MalformedHeaderError(f"protection header version {version}")
    if seq >> SEQ_BITS:
        raise MalformedHeaderError("nonzero bits above the 28-bit sequence number")
    return ProtectionHeader(
        flow_id=word0 & 0xFFFFFF,
        seq=seq,
        pte_address=pte,
        flags=(word0 >> 24) & 0x0F,
    )


def encode_header(h: Header) -> bytes:
    if isinstance(h, GtpuHeader):
        return encode_gtpu(h)
    return encode_protection(h)


@dataclass(frozen=True)
class Packet:
    """One copy of an application packet plus its encapsulation stack.

    ``header_stack`` is ordered outermost first. ``copy`` identifies the
    replica (path index) once the packet has been replicated, else -1.
    """

    payload_id: int
    payload_len: int
    flow: FlowId
    created_at: int = 0
    inner_dscp: int = 0
    header_stack: Tuple[Header, ...] = ()
    copy: int = -1
    trace: Optional[Tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.payload_len <= 0:
            raise ValueError("payload_len must be positive")
        if not 0 <= self.inner_dscp < 64:
            raise ValueError(f"dscp {self.inner_dscp} does not fit in 6 bits")

    @property
    def wire_size(self) -> int:
        return self.payload_len + sum(h.size for h in self.header_stack)

    @property
    def outermost(self) -> Optional[Header]:
        return self.header_stack[0] if self.header_stack else None

    def protection(self) -> Optional[ProtectionHeader]:
        for h in self.header_stack:
            if isinstance(h, ProtectionHeader):
                return h
        return None

    def to_bytes(self) -> bytes:
        """Headers on the wire followed by a zero-filled payload."""
        return b"".join(encode_header(h) for h in self.header_stack) + bytes(
            self.payload_len
        )


def push_header(p: Packet, h: Header) -> Packet:
    if isinstance(h, ProtectionHeader) and p.protection() is not None:
        raise LayeringError("packet already carries a protection header")
    trace = p.trace + (f"+{_kind(h)}",) if p.trace is not None else None
    return replace(p, header_stack=(h,) + p.header_stack, trace=trace)


def pop_header(
    p: Packet, expect: Optional[Type[Header]] = None
) -> Tuple[Header, Packet]:
    """Remove the outermost header, optionally checking its kind."""
    if not p.header_stack:
        raise LayeringError("pop on a packet without headers")
    h = p.header_stack[0]
    if expect is not None and not isinstance(h, expect):
        raise LayeringError(
            f"expected outermost {expect.__name__}, found {type(h).__name__}"
        )
    trace = p.trace + (f"-{_kind(h)}",) if p.trace is not None else None
    return h, replace(p, header_stack=p.header_stack[1:], trace=trace)


def _kind(h: Header) -> str:
    return "GTPU" if isinstance(h, GtpuHeader) else "PROT"


def format_header(h: Header) -> str:
    if isinstance(h, GtpuHeader):
        return f"GTPU teid={h.teid:#x} len={h.length}"
    return f"PROT flow={h.flow_id} seq={h.seq} pte={h.pte_address}"


def format_headers(p: Packet) -> str:
    """Debug dump: one header per line, outermost first."""
    return "\n".join(format_header(h) for h in p.header_stack)


def header_balance(p: Packet) -> int:
    """Pushes minus pops recorded in a traced packet's header log."""
    if p.trace is None:
        return len(p.header_stack)
    return sum(1 if op[0] == "+" else -1 for op in p.trace if op[0] in "+-")
