"""Incentive programs, reward calculation, catalog encoding and the
anonymity-set threshold."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from fractions import Fraction
from pathlib import Path

from . import encoding
from .errors import EncodingError, ProgramConfigError, RewardConfigError

FREQUENCIES = (4, 6, 8, 12, 16)
DURATIONS = tuple(range(7, 22))
MAX_CREDENTIALS = max(FREQUENCIES) * max(DURATIONS)  # 336

# Each encoded program record occupies this many bytes on the wire (length
# prefix included), so a ten-program catalog is exactly 5,480 bytes.
PROGRAM_RECORD_SIZE = 548
DEFAULT_ACTIVATION_DELAY = timedelta(hours=24)
DEFAULT_THRESHOLD = 10


class Purpose(Enum):
    DATA_DRIVEN = "DataDrivenServices"
    TARIFF = "TariffSpecification"
    OPERATIONAL = "OperationalServices"
    ADVERTISEMENT = "Advertisement"


class Decision(Enum):
    EXECUTE = "execute"
    CANCEL = "cancel"


@dataclass(frozen=True)
class TokenInfo:
    value: Fraction
    valid_days: Fraction
    activation_delay: timedelta = DEFAULT_ACTIVATION_DELAY

    def __post_init__(self):
        if self.value <= 0 or self.valid_days <= 0:
            raise RewardConfigError(f"token info must be positive, got {self.value}/{self.valid_days}")

    @property
    def delay_label(self) -> str:
        hours, rem = divmod(int(self.activation_delay.total_seconds()), 3600)
        return f"{hours}h" if not rem else f"{int(self.activation_delay.total_seconds())}s"


def _fractions(mapping) -> dict[Purpose, Fraction]:
    return {Purpose(p) if not isinstance(p, Purpose) else p: Fraction(v) for p, v in mapping.items()}


@dataclass(frozen=True)
class RewardWeights:
    """Coefficients of the linear reward relations.

    The defaults are calibrated so that a (12 reports/day, 7 days,
    data-driven, noise scale 5) program earns a 15-unit token valid for 45 days.
    Weights for the other three purposes are policy choices.
    """

    base_incentive: Fraction = Fraction(5)
    freq_weight_val: Fraction = Fraction(1, 2)
    pd_weight_val: Fraction = Fraction(1)
    prp_weight_val: dict = field(default_factory=lambda: _fractions({
        Purpose.DATA_DRIVEN: 2, Purpose.TARIFF: 1, Purpose.OPERATIONAL: 1, Purpose.ADVERTISEMENT: 4,
    }))
    noise_weight_val: Fraction = Fraction(1)
    base_valid_day: Fraction = Fraction(30)
    freq_weight_exp: Fraction = Fraction(1)
    pd_weight_exp: Fraction = Fraction(1)
    prp_weight_exp: dict = field(default_factory=lambda: _fractions({
        Purpose.DATA_DRIVEN: 6, Purpose.TARIFF: 3, Purpose.OPERATIONAL: 3, Purpose.ADVERTISEMENT: 10,
    }))
    noise_weight_exp: Fraction = Fraction(2)
    activation_delay: timedelta = DEFAULT_ACTIVATION_DELAY

    def __post_init__(self):
        scalars = [
            self.base_incentive, self.freq_weight_val, self.pd_weight_val, self.noise_weight_val,
            self.base_valid_day, self.freq_weight_exp, self.pd_weight_exp, self.noise_weight_exp,
        ]
        for name in ("prp_weight_val", "prp_weight_exp"):
            table = _fractions(getattr(self, name))
            missing = [p.value for p in Purpose if p not in table]
            if missing:
                raise RewardConfigError(f"{name} lacks entries for {missing}")
            object.__setattr__(self, name, table)
            scalars.extend(table.values())
        if any(Fraction(w) < 0 for w in scalars):
            raise RewardConfigError("reward weights must be non-negative")


def compute_reward(freq: int, pd: int, prp: Purpose, nsc, weights: RewardWeights | None = None) -> TokenInfo:
    w = weights or RewardWeights()
    nsc = Fraction(nsc)
    value = (w.base_incentive + w.freq_weight_val * freq + w.pd_weight_val * pd
             + w.prp_weight_val[prp] - w.noise_weight_val * nsc)
    valid_days = (w.base_valid_day + w.freq_weight_exp * freq + w.pd_weight_exp * pd
                  + w.prp_weight_exp[prp] - w.noise_weight_exp * nsc)
    if value <= 0 or valid_days <= 0:
        raise RewardConfigError(
            f"weights give value={value}, validDays={valid_days} for freq={freq}, pd={pd}, "
            f"prp={prp.value}, nsc={nsc}")
    return TokenInfo(value, valid_days, w.activation_delay)


@dataclass(frozen=True)
class Program:
    id: str
    freq: int
    tokinf: TokenInfo
    pd: int
    pat: datetime
    prp: Purpose
    nsc: Fraction
    description: str = ""

    @property
    def n(self) -> int:
        """Number of reports (and credentials) over the whole program."""
        return self.freq * self.pd

    @property
    def window(self) -> timedelta:
        return timedelta(hours=24) / self.freq

    @property
    def end(self) -> datetime:
        return self.pat + timedelta(days=self.pd)

    def window_bounds(self, index: int) -> tuple[datetime, datetime]:
        start = self.pat + index * self.window
        return start, start + self.window

    def encode(self) -> bytes:
        return encode_program(self)


def validate_program(pr: Program) -> bool:
    try:
        return pr.freq in FREQUENCIES and pr.pd in DURATIONS and Fraction(pr.nsc) >= 0
    except (TypeError, ValueError):
        return False


@dataclass(frozen=True)
class ProgramSpec:
    """One catalog configuration row."""

    freq: int
    pd: int
    prp: Purpose
    nsc: Fraction = Fraction(0)
    description: str = ""


def next_midnight(now: datetime) -> datetime:
    if now.tzinfo is None:
        now = now.replace(tzinfo=timezone.utc)
    day = now.replace(hour=0, minute=0, second=0, microsecond=0)
    return day + timedelta(days=1)


def generate_program_list(config: list[ProgramSpec], weights: RewardWeights | None = None,
                          now: datetime | None = None) -> list[Program]:
    """Build the published catalog. Programs start at the midnight after ``now``."""
    now = now or datetime.now(timezone.utc)
    pat = next_midnight(now)
    programs = []
    for i, row in enumerate(config):
        if row.freq not in FREQUENCIES:
            raise ProgramConfigError(f"row {i}: frequency {row.freq} not in {FREQUENCIES}")
        if row.pd not in DURATIONS:
            raise ProgramConfigError(f"row {i}: duration {row.pd} outside 7..21 days")
        if Fraction(row.nsc) < 0:
            raise ProgramConfigError(f"row {i}: negative noise scale {row.nsc}")
        try:
            tokinf = compute_reward(row.freq, row.pd, row.prp, row.nsc, weights)
        except RewardConfigError as exc:
            raise ProgramConfigError(f"row {i}: {exc}") from None
        pr = Program(f"pr-{i + 1:02d}", row.freq, tokinf, row.pd, pat, row.prp,
                     Fraction(row.nsc), row.description or _describe(row, tokinf))
        assert validate_program(pr)
        programs.append(pr)
    return programs


def _describe(row: ProgramSpec, tokinf: TokenInfo) -> str:
    noise = "no noise" if row.nsc == 0 else f"noise scale {row.nsc}"
    return (f"{row.freq} reports/day for {row.pd} days, {noise}, purpose {row.prp.value}; "
            f"reward {tokinf.value} valid {tokinf.valid_days} days, active {tokinf.delay_label} "
            f"after the final report")


DEFAULT_CATALOG = (
    ProgramSpec(4, 7, Purpose.DATA_DRIVEN, Fraction(0)),
    ProgramSpec(4, 7, Purpose.TARIFF, Fraction(1)),
    ProgramSpec(6, 7, Purpose.OPERATIONAL, Fraction(0)),
    ProgramSpec(8, 10, Purpose.DATA_DRIVEN, Fraction(1)),
    ProgramSpec(12, 7, Purpose.DATA_DRIVEN, Fraction(5)),
    ProgramSpec(12, 14, Purpose.ADVERTISEMENT, Fraction(2)),
    ProgramSpec(16, 7, Purpose.OPERATIONAL, Fraction(1)),
    ProgramSpec(16, 21, Purpose.DATA_DRIVEN, Fraction(3)),
    ProgramSpec(6, 21, Purpose.TARIFF, Fraction(0)),
    ProgramSpec(8, 14, Purpose.ADVERTISEMENT, Fraction(1, 2)),
)


def load_catalog_config(path: str | Path) -> list[ProgramSpec]:
    """Read ``freq,pd,purpose,nsc[,description]`` rows from a CSV file."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"freq", "pd", "purpose", "nsc"} - set(reader.fieldnames or ())
        if missing:
            raise ProgramConfigError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(ProgramSpec(int(rec["freq"]), int(rec["pd"]), parse_purpose(rec["purpose"]),
                                        Fraction(rec["nsc"]), (rec.get("description") or "").strip()))
            except (ValueError, KeyError) as exc:
                raise ProgramConfigError(f"{path}:{lineno}: {exc}") from None
    return rows


def parse_purpose(text: str) -> Purpose:
    key = text.strip().replace("-", "").replace(" ", "").replace("_", "").lower()
    for p in Purpose:
        if key in (p.value.lower(), p.name.replace("_", "").lower()):
            return p
    raise ValueError(f"unknown purpose {text!r}")


def check_anonymity_threshold(participant_count: int, threshold: int = DEFAULT_THRESHOLD) -> Decision:
    return Decision.EXECUTE if participant_count > threshold else Decision.CANCEL


# -- wire format ---------------------------------------------------------------

def _program_fields(pr: Program) -> tuple:
    return (pr.id, pr.freq, pr.tokinf.value, pr.tokinf.valid_days,
            int(pr.tokinf.activation_delay.total_seconds()), pr.pd, pr.pat, pr.prp, pr.nsc)


def encode_program(pr: Program) -> bytes:
    """Fixed-size record: a length-prefixed body whose last field is the
    description, NUL-padded (or truncated) to fill the record."""
    head = encoding.encode(*_program_fields(pr))
    room = PROGRAM_RECORD_SIZE - 2 * encoding.LEN.size - len(head)
    if room < 0:
        raise EncodingError(f"program {pr.id} does not fit a {PROGRAM_RECORD_SIZE}-byte record")
    text = pr.description.encode("utf-8")[:room]
    body = head + encoding.encode_field(text + bytes(room - len(text)))
    return encoding.encode_field(body)


def decode_program(body: bytes) -> Program:
    f = encoding.decode(body, 10)
    tokinf = TokenInfo(encoding.as_fraction(f[2]), encoding.as_fraction(f[3]),
                       timedelta(seconds=encoding.as_int(f[4])))
    return Program(
        id=encoding.as_str(f[0]),
        freq=encoding.as_int(f[1]),
        tokinf=tokinf,
        pd=encoding.as_int(f[5]),
        pat=encoding.as_datetime(f[6]),
        prp=Purpose(encoding.as_str(f[7])),
        nsc=encoding.as_fraction(f[8]),
        description=f[9].rstrip(b"\x00").decode("utf-8", errors="ignore"),
    )


def encode_catalog(programs: list[Program]) -> bytes:
    return b"".join(encode_program(p) for p in programs)


def decode_catalog(blob: bytes) -> list[Program]:
    return [decode_program(body) for body in encoding.decode(blob)]


def with_pat(pr: Program, pat: datetime) -> Program:
    return replace(pr, pat=pat)
