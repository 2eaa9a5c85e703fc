"""Utility-provider side: catalog publication, enrollment and token minting,
anonymous report verification and archiving, and token redemption.

Work is tallied per scope (shared, enrollment sequence number, pseudonym,
token uid) rather than per meter, since the provider never learns which
meter sent a report.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from fractions import Fraction

from . import crypto, encoding, messages
from .counters import OperationCounters
from .crypto import KeyPair, PublicKey, Signature
from .errors import DecryptionError, EncodingError, ProtocolStateError
from .messages import ReportPayload, Token
from .programs import (DEFAULT_THRESHOLD, Decision, Program, check_anonymity_threshold,
                       decode_program, encode_catalog)

log = logging.getLogger(__name__)

SHARED = "shared"


class TokenStatus(Enum):
    ISSUED = "Issued"
    SPENT = "Spent"


class Verdict(Enum):
    ACCEPT = "accept"
    REJECT_DECRYPT = "decrypt"
    REJECT_MALFORMED = "malformed"
    REJECT_UNKNOWN_PROGRAM = "unknown-program"
    REJECT_NO_KEY = "no-shared-key"
    REJECT_CREDENTIAL = "credential"
    REJECT_INTEGRITY = "integrity"
    REJECT_REPLAY = "replay"
    REJECT_CHAIN_BREAK = "chain-break"
    REJECT_OVER_REPORT = "over-report"
    REJECT_UNKNOWN_PSEUDONYM = "unknown-pseudonym"

    @property
    def accepted(self) -> bool:
        return self is Verdict.ACCEPT


class Redemption(Enum):
    GRANTED = "Granted"
    BAD_SIGNATURE = "bad-signature"
    NOT_ACTIVE = "not-active"
    EXPIRED = "expired"
    ALREADY_SPENT = "already-spent"
    UNKNOWN_UID = "unknown-uid"

    @property
    def granted(self) -> bool:
        return self is Redemption.GRANTED


@dataclass
class TokenLedgerEntry:
    token: Token
    signature: Signature
    status: TokenStatus = TokenStatus.ISSUED
    program_id: str = ""


class TokenLedger:
    """Issued tokens keyed by uid. Redemption is linearizable per uid."""

    def __init__(self):
        self._entries: dict[bytes, TokenLedgerEntry] = {}
        self._lock = threading.Lock()
        self.log: list[dict] = []

    def __contains__(self, uid: bytes) -> bool:
        with self._lock:
            return uid in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def issue(self, entry: TokenLedgerEntry) -> None:
        with self._lock:
            if entry.token.uid in self._entries:
                raise ProtocolStateError("token uid already in the ledger")
            self._entries[entry.token.uid] = entry
            self.log.append({"op": "issue", "uid": entry.token.uid.hex(), "program_id": entry.program_id,
                             "value": str(entry.token.value), "active": entry.token.active.isoformat(),
                             "exp": entry.token.exp.isoformat()})

    def get(self, uid: bytes) -> TokenLedgerEntry | None:
        with self._lock:
            return self._entries.get(uid)

    def entries(self) -> list[TokenLedgerEntry]:
        with self._lock:
            return [e for _, e in sorted(self._entries.items())]

    def spend(self, uid: bytes) -> Redemption:
        """Atomically move Issued to Spent."""
        with self._lock:
            entry = self._entries.get(uid)
            if entry is None:
                return Redemption.UNKNOWN_UID
            if entry.status is TokenStatus.SPENT:
                return Redemption.ALREADY_SPENT
            entry.status = TokenStatus.SPENT
            self.log.append({"op": "spend", "uid": uid.hex()})
            return Redemption.GRANTED

    def statuses(self) -> dict[str, str]:
        with self._lock:
            return {uid.hex(): e.status.value for uid, e in sorted(self._entries.items())}

    def to_ndjson(self) -> str:
        with self._lock:
            return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


@dataclass
class ParticipantRecord:
    pseudonym: bytes
    last_validated_credential: bytes
    reports_accepted: int
    program_id: str


@dataclass(frozen=True)
class ConsumptionRecord:
    pseudonym: bytes
    interval_index: int
    window_start: datetime
    value: float
    noisy: bool
    program_id: str
    accepted_at: datetime | None = None


class ConsumptionStore:
    """Append-only archive of accepted report values."""

    COLUMNS = ("pseudonym", "interval_index", "window_start", "value", "noisy", "program_id")

    def __init__(self):
        self._records: list[ConsumptionRecord] = []
        self._keys: set[tuple[bytes, int, str]] = set()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(list(self._records))

    def append(self, rec: ConsumptionRecord) -> None:
        key = (rec.pseudonym, rec.interval_index, rec.program_id)
        if key in self._keys:
            raise ProtocolStateError("consumption record already archived for this interval")
        self._keys.add(key)
        self._records.append(rec)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        rows = sorted(self._records, key=lambda r: (r.program_id, r.pseudonym, r.interval_index))
        for r in rows:
            w.writerow([r.pseudonym.hex(), r.interval_index, r.window_start.isoformat(),
                        repr(r.value), int(r.noisy), r.program_id])
        return buf.getvalue()


@dataclass
class PendingEnrollment:
    seq: int
    meter_id: str
    blinded: int
    program: Program


@dataclass(frozen=True)
class EnrollmentOutcome:
    program_id: str
    decision: Decision
    participants: int
    # (enrollment seq, meter id, sealed grant) or (seq, meter id, cancel signature)
    grants: list = field(default_factory=list)
    cancels: list = field(default_factory=list)


@dataclass
class ProgramState:
    program: Program
    open: bool = True
    decision: Decision | None = None
    shared_key: bytes | None = None
    pending: list = field(default_factory=list)
    anchors: set = field(default_factory=set)


def days_to_timedelta(days: Fraction) -> timedelta:
    """Exact for whole seconds; fractional seconds are dropped because
    token times are encoded at one-second resolution."""
    return timedelta(seconds=math.floor(Fraction(days) * 86400))


def final_report_datetime(pr: Program) -> datetime:
    """End of the last reporting window."""
    return pr.pat + timedelta(days=pr.pd)


class UtilityProvider:
    def __init__(self, keys: KeyPair, meter_keys: dict[str, PublicKey], rng: random.Random,
                 threshold: int = DEFAULT_THRESHOLD):
        self.keys = keys
        self.meter_keys = meter_keys
        self.rng = rng
        self.threshold = threshold
        self.programs: dict[str, ProgramState] = {}
        self.participants: dict[bytes, ParticipantRecord] = {}
        self.store = ConsumptionStore()
        self.ledger = TokenLedger()
        self.scoped: dict[str, OperationCounters] = {SHARED: OperationCounters(keygens=1)}
        self.rejections: list[tuple[str, str]] = []
        self._seq = 0

    @property
    def modulus_len(self) -> int:
        return self.keys.public.byte_len

    def counters_for(self, scope: str) -> OperationCounters:
        return self.scoped.setdefault(scope, OperationCounters())

    # -- phase I --------------------------------------------------------------

    def publish_programs(self, catalog: list[Program]) -> tuple[bytes, Signature]:
        for pr in catalog:
            self.programs[pr.id] = ProgramState(pr)
        blob = encode_catalog(catalog)
        c = self.scoped[SHARED]
        c.program_list_gens += 1
        c.asym_ops += 1
        return blob, crypto.sign(self.keys.private, blob)

    # -- phase III ------------------------------------------------------------

    def handle_enrollment(self, wire: bytes) -> int | None:
        """Verify and queue an enrollment. Returns its sequence number, or
        ``None`` when discarded. Grants go out when the program's enrollment
        closes."""
        self._seq += 1
        seq = self._seq
        c = self.counters_for(f"enroll:{seq}")
        c.asym_ops += 1
        try:
            plaintext = crypto.open_sealed(self.keys.private, wire)
            meter_id, blinded, record, sig = messages.decode_enrollment(plaintext)
            program = decode_program(messages_body(record))
        except (DecryptionError, EncodingError, ValueError) as exc:
            self._reject("enrollment", f"unreadable: {exc}")
            return None
        key = self.meter_keys.get(meter_id)
        c.asym_ops += 1
        if key is None or not crypto.verify(key, messages.enrollment_message(blinded, record), sig):
            self._reject("enrollment", "bad meter signature")
            return None
        state = self.programs.get(program.id)
        if state is None or state.program != program:
            self._reject("enrollment", "unknown program")
            return None
        if not state.open:
            self._reject("enrollment", "enrollment closed")
            return None
        if any(p.meter_id == meter_id for p in state.pending):
            self._reject("enrollment", "duplicate enrollment")
            return None
        if not 0 <= blinded < self.keys.public.n:
            self._reject("enrollment", "blinded value out of range")
            return None
        state.pending.append(PendingEnrollment(seq, meter_id, blinded, program))
        return seq

    def close_enrollment(self, program_id: str) -> EnrollmentOutcome:
        """Apply the anonymity threshold, then mint grants or sign cancel
        notices. The enrollment roster is discarded afterwards."""
        state = self.programs[program_id]
        if not state.open:
            raise ProtocolStateError(f"enrollment for {program_id} already closed")
        state.open = False
        count = len(state.pending)
        decision = check_anonymity_threshold(count, self.threshold)
        state.decision = decision
        grants, cancels = [], []
        for p in state.pending:
            if decision is Decision.EXECUTE:
                grants.append((p.seq, p.meter_id, self._grant(p)))
            else:
                c = self.counters_for(f"cancel:{p.seq}")
                c.asym_ops += 1
                cancels.append((p.seq, p.meter_id,
                                crypto.sign(self.keys.private, messages.cancel_message(program_id))))
        state.pending = []
        return EnrollmentOutcome(program_id, decision, count, grants, cancels)

    def _grant(self, p: PendingEnrollment) -> bytes:
        pr = p.program
        c = self.counters_for(f"enroll:{p.seq}")
        frdt = final_report_datetime(pr)
        active = frdt + pr.tokinf.activation_delay
        exp = active + days_to_timedelta(pr.tokinf.valid_days)
        uid = crypto.random_bytes(self.rng, messages.UID_LEN)
        while uid in self.ledger:
            uid = crypto.random_bytes(self.rng, messages.UID_LEN)
        token = Token(pr.tokinf.value, exp, active, uid)
        c.token_gens += 1
        c.random += 1
        token_sig = crypto.sign(self.keys.private, token.encode())
        blind_sig = crypto.sign_blinded(p.blinded, self.keys.private)
        k = self.modulus_len
        message = messages.grant_message(blind_sig, token, token_sig, k)
        msig = crypto.sign(self.keys.private, message)
        wire = crypto.seal(self.meter_keys[p.meter_id], messages.encode_grant(message, msig, k), self.rng)
        c.asym_ops += 4
        c.ledger_ops += 1
        self.ledger.issue(TokenLedgerEntry(token, token_sig, program_id=pr.id))
        return wire

    # -- phase V --------------------------------------------------------------

    def receive_shared_key(self, wire: bytes, generator_keys: dict[str, PublicKey]) -> bool:
        c = self.scoped[SHARED]
        c.asym_ops += 2
        try:
            generator_id, program_id, key, sig = messages.decode_key_distribution(
                crypto.open_sealed(self.keys.private, wire))
        except (DecryptionError, EncodingError) as exc:
            self._reject("shared-key", f"unreadable: {exc}")
            return False
        pk = generator_keys.get(generator_id)
        state = self.programs.get(program_id)
        if pk is None or state is None or not crypto.verify(pk, key, sig):
            self._reject("shared-key", "bad signature")
            return False
        state.shared_key = key
        return True

    # -- phase VII ------------------------------------------------------------

    def handle_report(self, program_id: str, wire: bytes, now: datetime | None = None) -> Verdict:
        state = self.programs.get(program_id)
        if state is None or state.decision is not Decision.EXECUTE:
            return self._verdict(Verdict.REJECT_UNKNOWN_PROGRAM, "report")
        if state.shared_key is None:
            return self._verdict(Verdict.REJECT_NO_KEY, "report")
        try:
            plaintext = crypto.open_sealed(self.keys.private, wire)
        except DecryptionError:
            self.counters_for("rejected").asym_ops += 1
            return self._verdict(Verdict.REJECT_DECRYPT, "report")
        try:
            payload = ReportPayload.decode(plaintext)
        except EncodingError:
            self.counters_for("rejected").asym_ops += 1
            return self._verdict(Verdict.REJECT_MALFORMED, "report")
        c = self.counters_for(f"pseudonym:{payload.pseudonym.hex()}")
        c.asym_ops += 1
        if payload.anchor_sig is not None:
            return self.verify_first_report(state, payload, c, now)
        return self.verify_subsequent_report(state, payload, c, now)

    def verify_first_report(self, state: ProgramState, payload: ReportPayload,
                            c: OperationCounters, now=None) -> Verdict:
        c.asym_ops += 1
        if not crypto.verify(self.keys.public, payload.credential, payload.anchor_sig):
            return self._verdict(Verdict.REJECT_CREDENTIAL, "first report")
        if payload.pseudonym in self.participants or payload.credential in state.anchors:
            return self._verdict(Verdict.REJECT_REPLAY, "first report")
        if not self._mac_ok(state, payload, c):
            return self._verdict(Verdict.REJECT_INTEGRITY, "first report")
        state.anchors.add(payload.credential)
        rec = ParticipantRecord(payload.pseudonym, payload.credential, 1, state.program.id)
        self.participants[payload.pseudonym] = rec
        c.db_ops += 1
        self._archive(state, rec, payload, 0, c, now)
        return Verdict.ACCEPT

    def verify_subsequent_report(self, state: ProgramState, payload: ReportPayload,
                                 c: OperationCounters, now=None) -> Verdict:
        c.db_ops += 1
        rec = self.participants.get(payload.pseudonym)
        if rec is None or rec.program_id != state.program.id:
            return self._verdict(Verdict.REJECT_UNKNOWN_PSEUDONYM, "report")
        if rec.reports_accepted >= state.program.n:
            return self._verdict(Verdict.REJECT_OVER_REPORT, "report")
        c.hashes += 1
        c.arithmetic += 1
        if not crypto.tags_equal(crypto.H(payload.credential), rec.last_validated_credential):
            return self._verdict(Verdict.REJECT_CHAIN_BREAK, "report")
        if not self._mac_ok(state, payload, c):
            return self._verdict(Verdict.REJECT_INTEGRITY, "report")
        index = rec.reports_accepted
        rec.last_validated_credential = payload.credential
        rec.reports_accepted += 1
        c.db_ops += 1
        self._archive(state, rec, payload, index, c, now)
        return Verdict.ACCEPT

    def _mac_ok(self, state: ProgramState, payload: ReportPayload, c: OperationCounters) -> bool:
        expected = crypto.mac(state.shared_key, messages.mac_input(payload.value, payload.pseudonym))
        c.macs += 1
        c.arithmetic += 1
        return crypto.tags_equal(expected, payload.tag)

    def _archive(self, state, rec, payload, index, c, now) -> None:
        start, _ = state.program.window_bounds(index)
        self.store.append(ConsumptionRecord(payload.pseudonym, index, start, payload.value,
                                            state.program.nsc > 0, state.program.id, now))
        c.db_ops += 1

    # -- phase VIII -----------------------------------------------------------

    def redeem_token(self, token: Token, sig: Signature, now: datetime) -> Redemption:
        c = self.counters_for(f"token:{token.uid.hex()}")
        c.asym_ops += 1
        if not crypto.verify(self.keys.public, token.encode(), sig):
            return Redemption.BAD_SIGNATURE
        c.ledger_ops += 1
        entry = self.ledger.get(token.uid)
        if entry is None or entry.token != token:
            return Redemption.UNKNOWN_UID
        if now < token.active:
            return Redemption.NOT_ACTIVE
        if now > token.exp:
            return Redemption.EXPIRED
        c.ledger_ops += 1
        return self.ledger.spend(token.uid)

    def handle_redemption(self, wire: bytes, now: datetime) -> Redemption:
        """Open a customer's sealed redemption request and redeem it."""
        try:
            plaintext = crypto.open_sealed(self.keys.private, wire)
            token, sig = messages.decode_redemption(plaintext)
        except (DecryptionError, EncodingError):
            self.counters_for("rejected").asym_ops += 1
            return Redemption.BAD_SIGNATURE
        self.counters_for(f"token:{token.uid.hex()}").asym_ops += 1
        return self.redeem_token(token, sig, now)

    def _reject(self, what: str, reason: str) -> None:
        self.rejections.append((what, reason))
        log.info("rejected %s: %s", what, reason)

    def _verdict(self, verdict: Verdict, what: str) -> Verdict:
        self._reject(what, verdict.value)
        return verdict

    # -- state inspection ---------------------------------------------------

    def persistent_state(self) -> bytes:
        """Everything the provider keeps after enrollment closes, serialised
        for inspection."""
        parts = [self.store.to_csv(), self.ledger.to_ndjson()]
        for rec in sorted(self.participants.values(), key=lambda r: r.pseudonym):
            parts.append(f"{rec.pseudonym.hex()},{rec.last_validated_credential.hex()},"
                         f"{rec.reports_accepted},{rec.program_id}\n")
        return "".join(parts).encode()


def messages_body(record: bytes) -> bytes:
    """Strip the length prefix from a fixed-size program record."""
    (body,) = encoding.decode(record, 1)
    return body


def redemption_request(up_key: PublicKey, token: Token, sig: Signature, rng: random.Random) -> bytes:
    """Customer side: seal a token for redemption."""
    return crypto.seal(up_key, messages.encode_redemption(token, sig, up_key.byte_len), rng)
