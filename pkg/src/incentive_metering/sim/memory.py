"""Analytic memory model per entity, plus a measured peak."""

from __future__ import annotations

from dataclasses import dataclass

from ..crypto import HASH_LEN, MAC_LEN, SHARED_KEY_LEN
from ..programs import PROGRAM_RECORD_SIZE
from .harness import run


@dataclass(frozen=True)
class ComponentSizes:
    program_list: int = 0
    rand: int = 0
    sig: int = 0
    cipher: int = 0
    mac: int = 0
    reading: int = 0
    noisy_reading: int = 0
    shared_key: int = 0
    keypair: int = 0
    pk_others: int = 0
    token: int = 0

    @classmethod
    def for_modulus(cls, bits: int, programs: int = 10, others: int = 2) -> "ComponentSizes":
        k = bits // 8
        return cls(
            program_list=programs * PROGRAM_RECORD_SIZE,
            rand=HASH_LEN,
            sig=k,
            cipher=256 if bits <= 1024 else 256 + 2 * (k - 128),
            mac=MAC_LEN,
            reading=8,
            noisy_reading=8,
            shared_key=SHARED_KEY_LEN,
            keypair=k * 4 + 3,       # n, d and the two half-size primes, plus e
            pk_others=others * (k + 3),
            token=60,
        )


@dataclass(frozen=True)
class MemoryEstimate:
    meter: int
    aggregator: int
    utility: int
    meter_cipher_slots: int
    meter_random_values: int

    @property
    def total(self) -> int:
        return self.meter + self.aggregator + self.utility


def estimate_memory(n: int, participants: int, s: ComponentSizes) -> MemoryEstimate:
    """Worst-case bytes held by each entity for one program."""
    meter = (s.program_list + (n + 4) * s.rand + s.sig + (n + 3) * s.cipher + s.mac
             + s.noisy_reading + n * s.reading + s.token + s.shared_key + s.keypair + s.pk_others)
    aggregator = participants * s.cipher + s.shared_key + s.sig + s.keypair + s.pk_others
    utility = (s.program_list + s.cipher + 3 * s.rand + 2 * s.mac + s.token + s.sig
               + n * s.noisy_reading + s.shared_key + s.keypair + s.pk_others)
    return MemoryEstimate(meter, aggregator, utility, n + 3, n + 4)


def measure_peak(bits: int = 1024, freq: int = 4, pd: int = 7, seed: int = 1,
                 optimized: bool = False) -> int:
    """Peak traced allocation for a one-meter run, keys and data included."""
    from .bench import bench_config
    cfg = bench_config(bits, seed, freq, pd).with_(optimized=optimized)
    return run(cfg, measure_memory=True).timings["peak_traced_bytes"]
