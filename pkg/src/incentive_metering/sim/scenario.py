"""Scenario configuration and its YAML file format (``schema_version: 1``)."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import yaml

from ..crypto import SUPPORTED_BITS
from ..errors import ConfigError
from ..programs import DEFAULT_CATALOG, DEFAULT_THRESHOLD, ProgramSpec, load_catalog_config, parse_purpose

SCHEMA_VERSION = 1
DEFAULT_START = datetime(2024, 3, 1, 9, 0, tzinfo=timezone.utc)
LINK_CLASSES = ("nan", "wan")


@dataclass(frozen=True)
class AdversarySpec:
    mode: str = "none"                 # none | eavesdrop | tamper
    targets: tuple[str, ...] = LINK_CLASSES
    rate: float = 0.0
    kinds: tuple[str, ...] | None = None  # message kinds to touch; None means all

    def __post_init__(self):
        if self.mode not in ("none", "eavesdrop", "tamper"):
            raise ConfigError(f"unknown adversary mode {self.mode!r}")
        bad = [t for t in self.targets if t not in LINK_CLASSES]
        if bad:
            raise ConfigError(f"adversary may only sit on semi-trusted links {LINK_CLASSES}, not {bad}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError("tamper rate must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "AdversarySpec":
        """``none``, ``eavesdrop`` or ``tamper:<rate>``, optionally followed by
        ``@nan,wan`` to pick target links."""
        text = text.strip()
        targets = LINK_CLASSES
        if "@" in text:
            text, where = text.split("@", 1)
            targets = tuple(t.strip() for t in where.split(",") if t.strip())
        if text in ("none", "eavesdrop"):
            return cls(text, targets)
        if text.startswith("tamper"):
            _, _, rate = text.partition(":")
            try:
                return cls("tamper", targets, float(rate or 1.0))
            except ValueError:
                raise ConfigError(f"bad tamper rate in {text!r}") from None
        raise ConfigError(f"unknown adversary spec {text!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    meters: int = 20
    programs: tuple[ProgramSpec, ...] = DEFAULT_CATALOG
    # program id -> number of meters enrolling (assigned in meter order)
    participation: tuple[tuple[str, int], ...] = (("pr-01", 20),)
    seed: int = 42
    rsa_bits: int = 1024
    threshold: int = DEFAULT_THRESHOLD
    topology: str = "ring"             # ring | clique | path to an edge-list file
    min_hops: int = 2
    max_hops: int = 3
    drop_prob: float = 0.0
    nan_bw: int = 250_000
    wan_bw: int = 1_000_000
    meters_sharing: int = 20
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    dataset: str | None = None
    epsilon: Fraction = Fraction(1)
    p_max: Fraction = Fraction(8)
    clamp: bool = True
    strict: bool = True
    optimized: bool = False
    start: datetime = DEFAULT_START
    bloom_m: int = 16384
    bloom_k: int = 7
    fpr_probes: int = 200
    redeem: bool = True
    check_counters: bool = False

    def __post_init__(self):
        if self.rsa_bits not in SUPPORTED_BITS:
            raise ConfigError(f"rsa_bits must be one of {SUPPORTED_BITS}")
        if self.meters < 1:
            raise ConfigError("at least one meter is required")
        total = sum(c for _, c in self.participation)
        if total > self.meters:
            raise ConfigError(f"participation ({total}) exceeds the meter count ({self.meters})")
        if any(c < 0 for _, c in self.participation):
            raise ConfigError("participation counts must be non-negative")
        ids = {f"pr-{i + 1:02d}" for i in range(len(self.programs))}
        unknown = [p for p, _ in self.participation if p not in ids]
        if unknown:
            raise ConfigError(f"participation names unknown programs {unknown}")
        if self.min_hops < 1 or self.max_hops < self.min_hops:
            raise ConfigError("need 1 <= min_hops <= max_hops")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigError("drop_prob must lie in [0, 1)")
        if self.threshold < 0:
            raise ConfigError("threshold must be non-negative")

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def meter_ids(self) -> list[str]:
        return [f"SM-{i:04d}" for i in range(self.meters)]

    def rng(self, label: str) -> random.Random:
        """Independent, reproducible stream for one purpose."""
        return random.Random(f"{self.seed}/{label}")


_SCALARS = {f.name for f in fields(ScenarioConfig)} - {"programs", "participation", "adversary",
                                                        "start", "epsilon", "p_max"}


def load_scenario(path: str | Path, **overrides) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    version = doc.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    kwargs = {}
    for key, value in doc.items():
        if key == "programs":
            kwargs["programs"] = tuple(_program_rows(value, path))
        elif key == "catalog_file":
            kwargs["programs"] = tuple(load_catalog_config(path.parent / value))
        elif key == "participation":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: participation must map program ids to counts")
            kwargs["participation"] = tuple((str(k), int(v)) for k, v in value.items())
        elif key == "adversary":
            kwargs["adversary"] = _adversary(value)
        elif key == "start":
            ts = value if isinstance(value, datetime) else datetime.fromisoformat(str(value).replace("Z", "+00:00"))
            kwargs["start"] = ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)
        elif key in ("epsilon", "p_max"):
            kwargs[key] = Fraction(str(value))
        elif key in _SCALARS:
            kwargs[key] = value
        else:
            raise ConfigError(f"{path}: unknown key {key!r}")
    if kwargs.get("topology") not in (None, "ring", "clique"):
        kwargs["topology"] = str(path.parent / kwargs["topology"])
    if kwargs.get("dataset"):
        kwargs["dataset"] = str(path.parent / kwargs["dataset"])
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**kwargs)


def _program_rows(rows, path) -> list[ProgramSpec]:
    out = []
    for i, row in enumerate(rows or []):
        try:
            out.append(ProgramSpec(int(row["freq"]), int(row["pd"]), parse_purpose(str(row["purpose"])),
                                   Fraction(str(row.get("nsc", 0))), str(row.get("description", ""))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: programs[{i}]: {exc}") from None
    return out


def _adversary(value) -> AdversarySpec:
    if value is None:
        return AdversarySpec()
    if isinstance(value, str):
        return AdversarySpec.parse(value)
    kinds = value.get("kinds")
    return AdversarySpec(value.get("mode", "none"), tuple(value.get("targets", LINK_CLASSES)),
                         float(value.get("rate", 0.0)), tuple(kinds) if kinds else None)


def dump_scenario(cfg: ScenarioConfig) -> str:
    doc = {"schema_version": SCHEMA_VERSION}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "programs":
            v = [{"freq": p.freq, "pd": p.pd, "purpose": p.prp.value, "nsc": str(p.nsc)} for p in v]
        elif f.name == "participation":
            v = dict(v)
        elif f.name == "adversary":
            v = {"mode": v.mode, "targets": list(v.targets), "rate": v.rate,
                 **({"kinds": list(v.kinds)} if v.kinds else {})}
        elif f.name == "start":
            v = v.isoformat()
        elif isinstance(v, Fraction):
            v = str(v)
        doc[f.name] = v
    return yaml.safe_dump(doc, sort_keys=False)
