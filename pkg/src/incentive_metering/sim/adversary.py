"""Network adversary on the semi-trusted links: passive recording or bit
flipping."""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .scenario import AdversarySpec

# Unauthenticated broadcast data is not a tampering target: nothing downstream
# could reject it, so the bookkeeping invariant would be meaningless.
UNTAMPERABLE = frozenset({"bloom"})


@dataclass
class Adversary:
    spec: AdversarySpec
    rng: random.Random
    transcript: list = field(default_factory=list)   # (link class, kind, bytes)
    tampered: set = field(default_factory=set)       # packet ids

    def active_on(self, link_class: str, kind: str) -> bool:
        if self.spec.mode == "none" or link_class not in self.spec.targets:
            return False
        return self.spec.kinds is None or kind in self.spec.kinds

    def observe(self, packet_id: int, link_class: str, kind: str, wire: bytes) -> bytes:
        """Called once per link traversal; returns the bytes that continue."""
        if not self.active_on(link_class, kind):
            return wire
        if self.spec.mode == "eavesdrop":
            self.transcript.append((link_class, kind, wire))
            return wire
        if kind in UNTAMPERABLE or packet_id in self.tampered or not wire:
            return wire
        if self.rng.random() < self.spec.rate:
            self.tampered.add(packet_id)
            bit = self.rng.randrange(len(wire) * 8)
            buf = bytearray(wire)
            buf[bit >> 3] ^= 1 << (bit & 7)
            return bytes(buf)
        return wire


# Delivery filters are bit arrays over packet digests. A sparse filter is full
# of patterns like 40 01 00 00 00 00 00 00 that coincide with dyadic float64
# readings (2.125 here), so they are searched for identifiers only.
VALUE_BLIND_KINDS = frozenset({"bloom"})


def scan_transcript(transcript, meter_ids, values, extra_needles=()) -> dict:
    """Search recorded traffic for meter ids and float64-encoded readings."""
    seen = {}
    for _, kind, wire in transcript:
        seen.setdefault(wire, kind)
    blob = b"\x00".join(seen)
    value_blob = b"\x00".join(w for w, k in seen.items() if k not in VALUE_BLIND_KINDS)
    leaks = []
    for mid in meter_ids:
        if mid.encode() in blob:
            leaks.append(("meter_id", mid))
    # 0.0 encodes as eight zero bytes, indistinguishable from padding or an
    # empty bloom filter, so it cannot be searched for meaningfully
    values = {v for v in values if v != 0.0}
    for v in sorted(values):
        if struct.pack(">d", v) in value_blob:
            leaks.append(("reading", repr(v)))
    for label, needle in extra_needles:
        if needle in blob:
            leaks.append((label, needle.hex()))
    return {"packets": len(transcript), "distinct_packets": len(seen), "bytes": len(blob),
            "needles": len(meter_ids) + len(values) + len(extra_needles), "leaks": leaks}
