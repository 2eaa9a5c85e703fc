"""Link framing overhead and per-meter transmission times.

Framing is table driven. The bundled table gives the on-wire size for five
anchor payload sizes on each link stack; sizes in between are interpolated
linearly on the overhead and rounded up to whole bytes. Below the smallest
anchor the smallest anchor's absolute overhead applies, above the largest
anchor its overhead ratio does.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from importlib import resources

from .errors import ConfigError, InvalidParameterError


class Stack(Enum):
    WISUN = "wisun"                # SM <-> AGG, IEEE 802.15.4g
    LTE_PDCP = "lte_pdcp"          # AGG <-> eNB
    ETHERNET_GTP = "ethernet_gtp"  # eNB <-> PGW, Ethernet carrying GTP tunnels
    ETHERNET = "ethernet"          # PGW <-> UP


NAN_STACKS = (Stack.WISUN,)
WAN_PATH = (Stack.LTE_PDCP, Stack.ETHERNET_GTP, Stack.ETHERNET)

# reference message sizes for the 1024-bit configuration
REFERENCE_PAYLOADS = {
    "program_list": 5480,
    "enrollment": 1024,
    "grant": 768,
    "shared_key": 512,
    "first_report": 512,
    "report": 256,
    "key_distribution": 512,
}

DEFAULT_DEADLINE = Fraction(1, 5)   # seconds
BANDWIDTH_QUANTUM = 40_000          # bits/s


@dataclass(frozen=True)
class LinkSpec:
    stack: Stack
    available_bw: int  # bits/s shared by the meters on the segment
    meters_sharing: int = 20

    @property
    def per_meter_bw(self) -> Fraction:
        return Fraction(self.available_bw, self.meters_sharing)


DEFAULT_LINKS = {
    Stack.WISUN: LinkSpec(Stack.WISUN, 250_000),
    Stack.LTE_PDCP: LinkSpec(Stack.LTE_PDCP, 1_000_000),
    Stack.ETHERNET_GTP: LinkSpec(Stack.ETHERNET_GTP, 1_000_000),
    Stack.ETHERNET: LinkSpec(Stack.ETHERNET, 1_000_000),
}


class FramingTable:
    def __init__(self, anchors: dict[Stack, list[tuple[int, int]]]):
        for stack, points in anchors.items():
            pts = sorted(points)
            if not pts:
                raise ConfigError(f"no anchors for {stack.value}")
            for (p0, f0), (p1, f1) in zip(pts, pts[1:]):
                if p0 == p1 or f1 < f0:
                    raise ConfigError(f"{stack.value}: anchors must be strictly increasing")
            if any(f < p for p, f in pts):
                raise ConfigError(f"{stack.value}: frame smaller than payload")
            anchors[stack] = pts
        self.anchors = anchors

    @classmethod
    def load(cls, path=None) -> "FramingTable":
        if path is None:
            text = resources.files("incentive_metering").joinpath("data/framing_table.csv").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        reader = csv.DictReader(text.splitlines())
        anchors: dict[Stack, list[tuple[int, int]]] = {}
        for row in reader:
            payload = int(row["payload"])
            for stack in Stack:
                if stack.value not in row:
                    raise ConfigError(f"framing table lacks column {stack.value}")
                anchors.setdefault(stack, []).append((payload, int(row[stack.value])))
        return cls(anchors)

    def frame_size(self, payload_bytes: int, stack) -> int:
        stack = _stack(stack)
        if stack not in self.anchors:
            raise ConfigError(f"unknown link stack {stack!r}")
        if payload_bytes < 0:
            raise InvalidParameterError("payload size must be non-negative")
        if payload_bytes == 0:
            return 0
        pts = self.anchors[stack]
        lo_p, lo_f = pts[0]
        if payload_bytes <= lo_p:
            return payload_bytes + (lo_f - lo_p)
        hi_p, hi_f = pts[-1]
        if payload_bytes >= hi_p:
            return math.ceil(Fraction(payload_bytes * hi_f, hi_p))
        for (p0, f0), (p1, f1) in zip(pts, pts[1:]):
            if p0 <= payload_bytes <= p1:
                o0, o1 = f0 - p0, f1 - p1
                overhead = o0 + Fraction(o1 - o0) * (payload_bytes - p0) / (p1 - p0)
                return payload_bytes + math.ceil(overhead)
        raise AssertionError("unreachable")


def _stack(value) -> Stack:
    if isinstance(value, Stack):
        return value
    try:
        return Stack(value)
    except ValueError:
        raise ConfigError(f"unknown link stack {value!r}") from None


_DEFAULT_TABLE: FramingTable | None = None


def default_table() -> FramingTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = FramingTable.load()
    return _DEFAULT_TABLE


def frame_size(payload_bytes: int, stack) -> int:
    return default_table().frame_size(payload_bytes, stack)


def transmission_time(packet_bytes: int, bw_bits_per_s) -> Fraction:
    """Exact seconds to push ``packet_bytes`` through ``bw_bits_per_s``."""
    bw = Fraction(bw_bits_per_s)
    if bw <= 0:
        raise InvalidParameterError("bandwidth must be positive")
    return Fraction(packet_bytes * 8) / bw


def min_required_bandwidth(payloads, stack, deadline=DEFAULT_DEADLINE,
                           quantum: int = BANDWIDTH_QUANTUM) -> int:
    """Smallest multiple of ``quantum`` that moves the largest framed message
    of ``payloads`` within ``deadline`` seconds."""
    payloads = list(payloads)
    if not payloads:
        raise InvalidParameterError("payload set must be non-empty")
    largest = max(frame_size(p, stack) for p in payloads)
    if largest == 0:
        return 0
    needed = Fraction(largest * 8) / Fraction(deadline)
    return math.ceil(needed / quantum) * quantum


@dataclass(frozen=True)
class TableCell:
    message: str
    payload: int
    stack: Stack
    packet: int
    seconds: Fraction


def transmission_table(links=None) -> list[TableCell]:
    links = links or DEFAULT_LINKS
    cells = []
    for name, payload in REFERENCE_PAYLOADS.items():
        for stack in Stack:
            packet = frame_size(payload, stack)
            cells.append(TableCell(name, payload, stack, packet,
                                   transmission_time(packet, links[stack].per_meter_bw)))
    return cells


def format_table(cells: list[TableCell]) -> str:
    header = f"{'message':<18}{'payload':>8}" + "".join(f"{s.value:>24}" for s in Stack)
    lines = [header]
    by_msg: dict[str, list[TableCell]] = {}
    for c in cells:
        by_msg.setdefault(c.message, []).append(c)
    for name, row in by_msg.items():
        cols = "".join(f"{c.packet:>10} B {float(c.seconds):>10.5f} s" for c in row)
        lines.append(f"{name:<18}{row[0].payload:>8}{cols}")
    return "\n".join(lines)
