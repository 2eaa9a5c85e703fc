"""Per-entity execution time across RSA modulus sizes."""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from ..crypto import SUPPORTED_BITS
from ..programs import ProgramSpec, Purpose
from .harness import run
from .scenario import ScenarioConfig

# Published reference timings (seconds) for a 4-reports/day, 7-day program
# on an emulated single-board meter; hardware specific, for comparison only.
REFERENCE = {
    128: (0.00875, 0.00117, 0.00992),
    256: (0.01950, 0.00216, 0.02166),
    512: (0.07977, 0.00941, 0.08918),
    1024: (0.46193, 0.04914, 0.51107),
    2048: (3.02650, 0.32894, 3.35544),
}


@dataclass(frozen=True)
class BenchRow:
    bits: int
    t_sm: float
    t_agg: float
    t_up: float

    @property
    def t_vas(self) -> float:
        return self.t_sm + self.t_agg + self.t_up


def bench_config(bits: int, seed: int = 1, freq: int = 4, pd: int = 7) -> ScenarioConfig:
    return ScenarioConfig(
        meters=1, programs=(ProgramSpec(freq, pd, Purpose.DATA_DRIVEN),),
        participation=(("pr-01", 1),), threshold=0, rsa_bits=bits, seed=seed,
        min_hops=1, max_hops=1, fpr_probes=0,
    )


def measure(bits: int, seed: int = 1, freq: int = 4, pd: int = 7) -> BenchRow:
    result = run(bench_config(bits, seed, freq, pd))
    wall = result.timings["wall_seconds"]
    return BenchRow(bits, wall.get("meter", 0.0), wall.get("aggregator", 0.0),
                    wall.get("utility", 0.0) + wall.get("customer", 0.0))


def benchmark(key_bits=SUPPORTED_BITS, repeats: int = 5, freq: int = 4, pd: int = 7) -> list[BenchRow]:
    """Median of ``repeats`` runs per key size. Key generation is excluded;
    each repeat uses fresh keys."""
    rows = []
    for bits in key_bits:
        samples = [measure(bits, seed=r + 1, freq=freq, pd=pd) for r in range(repeats)]
        rows.append(BenchRow(
            bits,
            statistics.median(s.t_sm for s in samples),
            statistics.median(s.t_agg for s in samples),
            statistics.median(s.t_up for s in samples),
        ))
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    lines = [f"{'bits':>6} {'t_sm':>10} {'t_agg':>10} {'t_up':>10} {'t_vas':>10}   "
             f"{'ref t_sm':>9} {'ref t_up':>9} {'ref t_vas':>9}"]
    for r in rows:
        ref = REFERENCE.get(r.bits)
        ref_cols = "".join(f" {v:>9.5f}" for v in ref) if ref else ""
        lines.append(f"{r.bits:>6} {r.t_sm:>10.5f} {r.t_agg:>10.5f} {r.t_up:>10.5f} {r.t_vas:>10.5f}  {ref_cols}")
    return "\n".join(lines)
