"""Fine-grained reading streams: CSV loading and a synthetic generator.

CSV columns are ``timestamp`` (ISO-8601), ``meter_id``, ``active_kwh`` and
``reactive_kvarh``, with optional ``quality`` and ``firmware``. Energy values
are parsed as exact decimals.
"""

from __future__ import annotations

import csv
import math
import random
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path

from ..errors import DatasetError
from ..meter import READING_INTERVAL, Reading

REQUIRED = ("timestamp", "meter_id", "active_kwh", "reactive_kvarh")


def _parse_time(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_dataset(path: str | Path, strict: bool = True) -> dict[str, list[Reading]]:
    """Per-meter, time-ordered reading streams.

    Rows must be in time order within each meter. In strict mode consecutive
    readings must be exactly 15 minutes apart; otherwise gaps that are whole
    multiples of 15 minutes are allowed and left for interpolation.
    """
    streams: dict[str, list[Reading]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DatasetError(f"{path}: empty file")
        missing = [c for c in REQUIRED if c not in reader.fieldnames]
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        for rowno, row in enumerate(reader, start=2):
            try:
                ts = _parse_time(row["timestamp"])
                active = Fraction(row["active_kwh"].strip())
                reactive = Fraction(row["reactive_kvarh"].strip() or "0")
                quality = int(row["quality"]) if row.get("quality") not in (None, "") else None
            except (ValueError, TypeError, AttributeError) as exc:
                raise DatasetError(f"{path}: row {rowno}: {exc}") from None
            if active < 0:
                raise DatasetError(f"{path}: row {rowno}: negative active energy")
            meter = (row["meter_id"] or "").strip()
            if not meter:
                raise DatasetError(f"{path}: row {rowno}: empty meter_id")
            stream = streams.setdefault(meter, [])
            if stream:
                step = ts - stream[-1].timestamp
                if step <= timedelta(0):
                    raise DatasetError(f"{path}: row {rowno}: timestamp {ts.isoformat()} is not after "
                                       f"the previous reading of {meter}")
                if strict and step != READING_INTERVAL:
                    raise DatasetError(f"{path}: row {rowno}: {step} cadence, expected 15 minutes")
                if not strict and step % READING_INTERVAL:
                    raise DatasetError(f"{path}: row {rowno}: reading off the 15-minute grid")
            stream.append(Reading(ts, active, reactive, row.get("firmware") or None, quality))
    if not streams:
        raise DatasetError(f"{path}: no readings")
    return streams


def write_dataset(path: str | Path, streams: dict[str, list[Reading]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED)
        for meter in sorted(streams):
            for r in streams[meter]:
                w.writerow([r.timestamp.isoformat(), meter, _decimal(r.active_energy),
                            _decimal(r.reactive_energy)])


def _decimal(value: Fraction) -> str:
    return f"{value.numerator / value.denominator:.3f}" if value.denominator != 1 else str(value.numerator)


def synthetic_readings(meter_ids, start: datetime, days: int, rng_for, *,
                       mean_kw: float = 0.6) -> dict[str, list[Reading]]:
    """Household-like load: a base load plus morning and evening peaks, with
    multiplicative jitter, quantised to whole watt-hours.

    ``rng_for(meter_id)`` supplies each meter's generator.
    """
    slots = days * 96
    streams = {}
    for meter in meter_ids:
        rng: random.Random = rng_for(meter)
        scale = mean_kw * rng.uniform(0.5, 1.5)
        out = []
        for s in range(slots):
            ts = start + s * READING_INTERVAL
            hour = ts.hour + ts.minute / 60
            shape = (0.5 + 0.8 * math.exp(-((hour - 8) ** 2) / 4)
                     + 1.2 * math.exp(-((hour - 19) ** 2) / 6))
            kw = max(0.0, scale * shape * rng.uniform(0.7, 1.3))
            wh = round(kw * 250)  # kW over 15 minutes, in Wh
            var_h = round(wh * rng.uniform(0.1, 0.3))
            out.append(Reading(ts, Fraction(wh, 1000), Fraction(var_h, 1000), "fw-1.0", 0))
        streams[meter] = out
    return streams
