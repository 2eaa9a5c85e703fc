"""Smart-meter side of the protocol.

The meter enrolls in one program at a time, obtains a blind signature on the
anchor of a fresh hash chain, and then emits one anonymous report per
reporting window. Reports are built from locally aggregated, optionally
noised and purpose-minimised readings.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from fractions import Fraction

from . import crypto, encoding, messages
from .counters import OperationCounters
from .crypto import KeyPair, PublicKey, Signature
from .errors import (DecryptionError, EncodingError, IntegrityError, InvalidParameterError,
                     MissingDataError, ProtocolCompleteError, ProtocolStateError)
from .messages import ReportPayload, Token
from .programs import Program, Purpose, decode_catalog, validate_program

log = logging.getLogger(__name__)

READING_INTERVAL = timedelta(minutes=15)
READINGS_PER_DAY = 96
DEFAULT_EPSILON = Fraction(1)
DEFAULT_P_MAX = Fraction(8)  # kWh per hour


@dataclass(frozen=True)
class Reading:
    timestamp: datetime
    active_energy: Fraction
    reactive_energy: Fraction = Fraction(0)
    firmware: str | None = None
    quality: int | None = None


@dataclass(frozen=True)
class Pseudonym:
    uuid: bytes

    @classmethod
    def fresh(cls, rng: random.Random) -> "Pseudonym":
        return cls(crypto.random_bytes(rng, messages.PSEUDONYM_LEN))

    @property
    def hex(self) -> str:
        return self.uuid.hex()


@dataclass(frozen=True)
class CoarseReading:
    interval_index: int
    value: Fraction | float
    noisy: bool = False
    pseudonym: Pseudonym | None = None
    window_start: datetime | None = None
    window_end: datetime | None = None
    reactive: Fraction | None = None
    firmware: str | None = None
    quality: int | None = None
    interpolated: int = 0


@dataclass(frozen=True)
class NoiseParams:
    epsilon: Fraction
    delta_c: Fraction
    nsc: Fraction

    def __post_init__(self):
        for name in ("epsilon", "delta_c", "nsc"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if self.epsilon <= 0 or self.delta_c <= 0:
            raise InvalidParameterError("epsilon and delta_c must be positive")
        if self.nsc < 0:
            raise InvalidParameterError("noise scale must be non-negative")

    @property
    def sigma_base(self) -> Fraction:
        return self.delta_c / self.epsilon

    @property
    def sigma_hat(self) -> Fraction:
        return self.nsc * self.sigma_base

    @classmethod
    def for_program(cls, pr: Program, epsilon=DEFAULT_EPSILON, p_max=DEFAULT_P_MAX) -> "NoiseParams":
        hours = Fraction(24, pr.freq)
        return cls(Fraction(epsilon), hours * Fraction(p_max), pr.nsc)


def aggregate(window: list[Reading], freq: int, *, start: datetime | None = None, index: int = 0,
              pseudonym: Pseudonym | None = None, strict: bool = True) -> CoarseReading:
    """Sum one reporting window of 15-minute readings.

    ``start`` defaults to the first reading's timestamp. Missing slots raise
    in strict mode and are linearly interpolated otherwise.
    """
    slots = READINGS_PER_DAY // freq
    if start is None:
        if not window:
            raise MissingDataError(f"window {index} has no readings")
        start = window[0].timestamp
    end = start + slots * READING_INTERVAL
    by_slot: dict[int, Reading] = {}
    for r in window:
        offset = r.timestamp - start
        slot, rem = divmod(offset, READING_INTERVAL)
        if rem or not 0 <= slot < slots:
            raise MissingDataError(f"reading at {r.timestamp.isoformat()} is off the window grid")
        if slot in by_slot:
            raise MissingDataError(f"duplicate reading at {r.timestamp.isoformat()}")
        by_slot[slot] = r
    missing = [s for s in range(slots) if s not in by_slot]
    if missing and (strict or not by_slot):
        raise MissingDataError(f"window {index} starting {start.isoformat()} lacks {len(missing)} of {slots} readings")
    active = {s: r.active_energy for s, r in by_slot.items()}
    reactive = {s: r.reactive_energy for s, r in by_slot.items()}
    for s in missing:
        active[s] = _interpolate(active, s, slots)
        reactive[s] = _interpolate(reactive, s, slots)
    last = by_slot[max(by_slot)]
    quality = max((r.quality for r in by_slot.values() if r.quality is not None), default=None)
    if missing:
        quality = max(quality or 0, 1)
    return CoarseReading(
        interval_index=index,
        value=sum(active.values(), Fraction(0)),
        pseudonym=pseudonym,
        window_start=start,
        window_end=end,
        reactive=sum(reactive.values(), Fraction(0)),
        firmware=last.firmware,
        quality=quality,
        interpolated=len(missing),
    )


def _interpolate(known: dict[int, Fraction], slot: int, slots: int) -> Fraction:
    before = [s for s in known if s < slot]
    after = [s for s in known if s > slot]
    if before and after:
        s0, s1 = max(before), min(after)
        return known[s0] + (known[s1] - known[s0]) * (slot - s0) / (s1 - s0)
    return known[max(before)] if before else known[min(after)]


def perturb(c: CoarseReading, np: NoiseParams, rng: random.Random,
            clamp: bool = True) -> tuple[CoarseReading, bool]:
    """Add Gaussian noise with standard deviation ``nsc * delta_c / epsilon``.

    Returns the new reading and whether it was clamped at zero.
    """
    if np.nsc == 0:
        return c, False
    noisy = float(c.value) + rng.gauss(0.0, float(np.sigma_hat))
    clamped = clamp and noisy < 0
    if clamped:
        noisy = 0.0
    return replace(c, value=noisy, noisy=True), clamped


# Fields each purpose is allowed to see. Value and interval index are always kept.
PURPOSE_FIELDS = {
    Purpose.DATA_DRIVEN: frozenset({"window"}),
    Purpose.TARIFF: frozenset({"window"}),
    Purpose.OPERATIONAL: frozenset({"window", "quality"}),
    Purpose.ADVERTISEMENT: frozenset(),
}
ALL_FIELDS = frozenset({"window", "reactive", "firmware", "quality"})


def minimize(reading: CoarseReading, prp: Purpose, field_map=None) -> CoarseReading:
    keep = (field_map or PURPOSE_FIELDS)[prp]
    changes = {}
    if "window" not in keep:
        changes.update(window_start=None, window_end=None)
    if "reactive" not in keep:
        changes["reactive"] = None
    if "firmware" not in keep:
        changes["firmware"] = None
    if "quality" not in keep:
        changes["quality"] = None
    return replace(reading, **changes)


def report_extras(reading: CoarseReading) -> bytes:
    """Purpose-specific fields carried next to the value. Only the quality
    flag travels; the window is implied by the report's position."""
    if reading.quality is None:
        return b""
    return encoding.int_to_bytes(reading.quality) or b"\x00"


class Phase(Enum):
    IDLE = "idle"
    ENROLLED = "enrolled"
    AWAITING_GRANT = "awaiting_grant"
    REPORTING = "reporting"
    DONE = "done"
    ABORTED = "aborted"
    CANCELLED = "cancelled"


@dataclass(frozen=True)
class TokenRelease:
    token: Token
    signature: Signature


@dataclass
class MeterState:
    phase: Phase = Phase.IDLE
    report_index: int = 0
    selected: Program | None = None
    catalog: list = field(default_factory=list)
    chain: crypto.CredentialChain | None = None
    bf: crypto.BlindingFactor | None = None
    up_sig_on_last: Signature | None = None
    token: Token | None = None
    token_sig: Signature | None = None
    pseudonym: Pseudonym | None = None
    shared_key: bytes | None = None
    sent: list = field(default_factory=list)
    noise_values: list = field(default_factory=list)


class MeterAgent:
    """One smart meter. Single owner; drive it from one logical thread."""

    def __init__(self, meter_id: str, keys: KeyPair, up_key: PublicKey, agg_key: PublicKey,
                 rng: random.Random, *, readings: list[Reading] | None = None,
                 epsilon=DEFAULT_EPSILON, p_max=DEFAULT_P_MAX, strict: bool = True,
                 clamp: bool = True, optimized: bool = False, field_map=None):
        self.id = meter_id
        self.keys = keys
        self.up_key = up_key
        self.agg_key = agg_key
        self.rng = rng
        self.epsilon = Fraction(epsilon)
        self.p_max = Fraction(p_max)
        self.strict = strict
        self.clamp = clamp
        self.optimized = optimized
        self.field_map = field_map
        self.counters = OperationCounters(keygens=1)
        self.state = MeterState()
        self.events: list[tuple[str, str]] = []
        self.clamp_events = 0
        self.interpolated_readings = 0
        self.last_report: tuple[float, float] | None = None  # (exact, sent) for instrumentation
        self._readings: dict[datetime, Reading] = {}
        if readings:
            self.load_readings(readings)

    # -- data -----------------------------------------------------------------

    def load_readings(self, readings: list[Reading]) -> None:
        for r in readings:
            self._readings[r.timestamp] = r

    def window_readings(self, start: datetime, end: datetime) -> list[Reading]:
        out = []
        t = start
        while t < end:
            r = self._readings.get(t)
            if r is not None:
                out.append(r)
            t += READING_INTERVAL
        return out

    @property
    def phase(self) -> Phase:
        return self.state.phase

    @property
    def modulus_len(self) -> int:
        return self.keys.public.byte_len

    def _event(self, kind: str, detail: str = "") -> None:
        self.events.append((kind, detail))
        log.debug("%s %s %s", self.id, kind, detail)

    # -- phase I --------------------------------------------------------------

    def receive_catalog(self, catalog_blob: bytes, sig: Signature) -> list[Program]:
        self.counters.asym_ops += 1
        if not crypto.verify(self.up_key, catalog_blob, sig):
            self._event("catalog_rejected", "bad signature")
            raise IntegrityError("program catalog signature does not verify")
        programs = decode_catalog(catalog_blob)
        self.state.catalog = list(programs)
        return programs

    # -- phase II -------------------------------------------------------------

    def enroll(self, pr: Program) -> bytes:
        if self.state.phase not in (Phase.IDLE, Phase.CANCELLED, Phase.ABORTED):
            raise ProtocolStateError(f"{self.id}: cannot enroll while {self.state.phase.value}")
        if not validate_program(pr):
            raise InvalidParameterError(f"program {pr.id} is not valid")
        st = MeterState(phase=Phase.ENROLLED, selected=pr,
                        catalog=[] if self.optimized else self.state.catalog)
        self.state = st
        seed = crypto.random_bytes(self.rng, crypto.HASH_LEN)
        self.counters.random += 1
        st.chain = crypto.build_chain(seed, pr.n)
        self.counters.hashes += pr.n - 1
        blinded, st.bf = crypto.blind(st.chain.last, self.up_key, self.rng)
        self.counters.random += 1
        self.counters.arithmetic += 1
        record = pr.encode()
        sig = crypto.sign(self.keys.private, messages.enrollment_message(blinded, record))
        plaintext = messages.encode_enrollment(self.id, blinded, record, sig, self.modulus_len)
        wire = crypto.seal(self.up_key, plaintext, self.rng)
        self.counters.asym_ops += 2
        self._retain(wire)
        st.phase = Phase.AWAITING_GRANT
        self._event("enrolled", pr.id)
        return wire

    # -- phase IV -------------------------------------------------------------

    def process_grant(self, wire: bytes) -> None:
        st = self.state
        if st.phase is not Phase.AWAITING_GRANT:
            raise ProtocolStateError(f"{self.id}: no grant expected while {st.phase.value}")
        self._retain(wire)
        try:
            self.counters.asym_ops += 1
            plaintext = crypto.open_sealed(self.keys.private, wire)
            message, blind_sig, token, token_sig, msig = messages.decode_grant(plaintext)
            self.counters.asym_ops += 1
            if not crypto.verify(self.up_key, message, msig):
                raise IntegrityError("grant signature does not verify")
        except (DecryptionError, EncodingError, IntegrityError) as exc:
            self._abort(f"grant rejected: {exc}")
            raise IntegrityError(f"{self.id}: grant rejected: {exc}") from None
        sig = crypto.unblind(blind_sig, st.bf)
        self.counters.arithmetic += 1
        st.bf = None
        self.counters.asym_ops += 1
        if not crypto.verify(self.up_key, st.chain.last, sig):
            self._abort("unblinded credential signature does not verify")
            raise IntegrityError(f"{self.id}: credential signature does not verify")
        st.up_sig_on_last = sig
        st.token = token
        st.token_sig = token_sig
        st.pseudonym = Pseudonym.fresh(self.rng)
        self.counters.random += 1
        st.phase = Phase.REPORTING
        st.report_index = 0
        self._event("granted", st.selected.id)

    def process_cancel(self, sig: Signature) -> None:
        st = self.state
        if st.phase is not Phase.AWAITING_GRANT:
            raise ProtocolStateError(f"{self.id}: no cancel expected while {st.phase.value}")
        self.counters.asym_ops += 1
        if not crypto.verify(self.up_key, messages.cancel_message(st.selected.id), sig):
            self._event("cancel_rejected", "bad signature")
            raise IntegrityError("cancel notice signature does not verify")
        st.bf = None
        st.chain = None
        st.phase = Phase.CANCELLED
        self._event("cancelled", st.selected.id)

    def _abort(self, reason: str) -> None:
        self.state.bf = None
        self.state.phase = Phase.ABORTED
        self._event("integrity_violation", reason)

    def generate_shared_key(self) -> bytes:
        if self.state.phase is not Phase.REPORTING:
            raise ProtocolStateError(f"{self.id}: key generation needs a granted enrollment")
        key = crypto.new_shared_key(self.rng)
        self.counters.sym_keygens += 1
        sig = crypto.sign(self.keys.private, key)
        wire = crypto.seal(self.agg_key, messages.encode_shared_key(key, sig, self.modulus_len), self.rng)
        self.counters.asym_ops += 2
        self.state.shared_key = key
        self._retain(wire)
        return wire

    def receive_shared_key(self, wire: bytes, generator_key: PublicKey) -> None:
        if self.state.phase is not Phase.REPORTING:
            raise ProtocolStateError(f"{self.id}: key distribution needs a granted enrollment")
        self._retain(wire)
        self.counters.asym_ops += 2
        try:
            plaintext = crypto.open_sealed(self.keys.private, wire)
            _, program_id, key, sig = messages.decode_key_distribution(plaintext)
        except (DecryptionError, EncodingError) as exc:
            self._event("key_rejected", str(exc))
            raise IntegrityError(f"{self.id}: key distribution unreadable: {exc}") from None
        if program_id != self.state.selected.id or not crypto.verify(generator_key, key, sig):
            self._event("key_rejected", "bad signature")
            raise IntegrityError(f"{self.id}: shared key signature does not verify")
        self.state.shared_key = key

    # -- phase VI -------------------------------------------------------------

    def coarse_reading(self, i: int) -> CoarseReading:
        pr = self.state.selected
        start, end = pr.window_bounds(i)
        window = self.window_readings(start, end)
        c = aggregate(window, pr.freq, start=start, index=i, pseudonym=self.state.pseudonym,
                      strict=self.strict)
        if c.interpolated:
            self.interpolated_readings += c.interpolated
            self._event("interpolated", f"window {i}: {c.interpolated} readings")
        return c

    def build_report(self, i: int | None = None) -> bytes:
        st = self.state
        if st.phase is Phase.DONE:
            raise ProtocolCompleteError(f"{self.id}: all {st.selected.n} reports already sent")
        if st.phase is not Phase.REPORTING:
            raise ProtocolStateError(f"{self.id}: not reporting ({st.phase.value})")
        i = st.report_index if i is None else i
        n = st.selected.n
        if i >= n:
            raise ProtocolCompleteError(f"{self.id}: report {i} exceeds n={n}")
        if i != st.report_index:
            raise ProtocolStateError(f"{self.id}: expected report {st.report_index}, got {i}")
        if st.shared_key is None:
            raise ProtocolStateError(f"{self.id}: no shared key yet")
        pr = st.selected
        c = self.coarse_reading(i)
        exact = c.value
        noise = NoiseParams.for_program(pr, self.epsilon, self.p_max)
        c, clamped = perturb(c, noise, self.rng, self.clamp)
        if c.noisy:
            self.counters.random += 1
            self.counters.arithmetic += 1
            if not self.optimized:
                st.noise_values.append(c.value)
        if clamped:
            self.clamp_events += 1
        c = minimize(c, pr.prp, self.field_map)
        tag = crypto.mac(st.shared_key, messages.mac_input(c.value, st.pseudonym.uuid))
        self.counters.macs += 1
        payload = ReportPayload(
            credential=st.chain.links[n - 1 - i],
            value=float(c.value),
            pseudonym=st.pseudonym.uuid,
            extras=report_extras(c),
            tag=tag,
            anchor_sig=st.up_sig_on_last if i == 0 else None,
        )
        wire = crypto.seal(self.up_key, payload.encode(self.modulus_len), self.rng)
        self.counters.asym_ops += 1
        self._retain(wire)
        self.last_report = (float(exact), float(c.value))
        st.report_index = i + 1
        if st.report_index == n:
            st.phase = Phase.DONE
            self._event("done", pr.id)
        return wire

    # -- phase VIII -----------------------------------------------------------

    def release_token(self, now: datetime) -> TokenRelease | None:
        """The token once the program is complete and the activation time has
        passed; ``None`` (not yet) otherwise."""
        st = self.state
        if st.phase is not Phase.DONE or st.token is None:
            return None
        if now < st.token.active:
            return None
        return TokenRelease(st.token, st.token_sig)

    def _retain(self, wire: bytes) -> None:
        if not self.optimized:
            self.state.sent.append(wire)
