"""Operation tallies and their closed-form predictions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import CounterMismatch


@dataclass
class OperationCounters:
    asym_ops: int = 0       # encrypt, decrypt, sign, verify (blind or plain)
    hashes: int = 0
    macs: int = 0
    arithmetic: int = 0     # blind, unblind, noise additions, equality checks
    random: int = 0         # protocol random values (seed, r, pseudonym, noise draws)
    db_ops: int = 0         # consumption store select/insert/update
    ledger_ops: int = 0     # token ledger reads and writes
    keygens: int = 0
    sym_keygens: int = 0
    token_gens: int = 0
    program_list_gens: int = 0

    def add(self, other: "OperationCounters") -> "OperationCounters":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def copy(self) -> "OperationCounters":
        return OperationCounters(**asdict(self))

    def as_dict(self) -> dict:
        return asdict(self)


def total(items) -> OperationCounters:
    acc = OperationCounters()
    for c in items:
        acc.add(c)
    return acc


# Counters checked for exact agreement. keygens and sym_keygens are reported
# but not compared: only the designated meter creates the shared key.
CHECKED = ("asym_ops", "hashes", "macs", "arithmetic", "random", "db_ops")


@dataclass(frozen=True)
class CounterPrediction:
    meter: OperationCounters
    aggregator: OperationCounters
    utility: OperationCounters


def predict_counters(n: int, participants: int, noisy: bool = True) -> CounterPrediction:
    """Worst-case tallies for one program with ``n`` reports per meter and
    ``participants`` enrolled meters. The utility figures are per participant
    and include the shared publication and key-distribution work."""
    noise = n if noisy else 0
    meter = OperationCounters(
        asym_ops=n + 8, hashes=n - 1, macs=n, arithmetic=2 + noise, random=3 + noise,
        keygens=1,
    )
    aggregator = OperationCounters(asym_ops=participants + 2, keygens=1)
    utility = OperationCounters(
        asym_ops=n + 12, hashes=n - 1, macs=n, arithmetic=2 * n - 1, random=1, db_ops=3 * n - 1,
        keygens=1, token_gens=1, program_list_gens=1,
    )
    return CounterPrediction(meter, aggregator, utility)


def diff(measured: OperationCounters, predicted: OperationCounters, names=CHECKED) -> dict:
    return {
        name: (getattr(measured, name), getattr(predicted, name))
        for name in names
        if getattr(measured, name) != getattr(predicted, name)
    }


def assert_counters(measured: OperationCounters, predicted: OperationCounters,
                    names=CHECKED, label: str = "") -> None:
    bad = diff(measured, predicted, names)
    if bad:
        detail = ", ".join(f"{k}: measured {m} != predicted {p}" for k, (m, p) in bad.items())
        raise CounterMismatch(f"{label + ': ' if label else ''}{detail}")
