"""The aggregator: picks the shared-key generator, checks and redistributes
the key, and terminates the relay overlay."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import crypto, messages
from .counters import OperationCounters
from .crypto import KeyPair, PublicKey
from .errors import DecryptionError, EncodingError, InvalidParameterError, KeyDistributionError
from .overlay import DeliveryFilter, packet_digest

UP_RECIPIENT = "UP"


def designate_key_generator(participants, rng: random.Random) -> str:
    pool = sorted(participants)
    if not pool:
        raise InvalidParameterError("no participants to designate")
    return rng.choice(pool)


@dataclass
class Observation:
    epoch: int
    last_hop: str
    program_id: str
    digest: bytes


@dataclass
class Aggregator:
    keys: KeyPair
    rng: random.Random
    bloom_m: int = 16384
    bloom_k: int = 7
    counters: OperationCounters = field(default_factory=lambda: OperationCounters(keygens=1))
    observations: list = field(default_factory=list)
    events: list = field(default_factory=list)
    retained: list = field(default_factory=list)
    optimized: bool = False

    def __post_init__(self):
        self.epoch = 0
        self.filter = DeliveryFilter(self.bloom_m, self.bloom_k)
        self.broadcasts: list[DeliveryFilter] = []

    def designate(self, participants) -> str:
        return designate_key_generator(participants, self.rng)

    def distribute_shared_key(self, wire: bytes, generator_id: str, generator_key: PublicKey,
                              program_id: str, recipients: dict[str, PublicKey]) -> dict[str, bytes]:
        """Open the generator's key message, check its signature and seal the
        key to every other participant and the provider. ``recipients`` maps
        recipient names to public keys and must not include the generator."""
        self.counters.asym_ops += 1
        try:
            key, sig = messages.decode_shared_key(crypto.open_sealed(self.keys.private, wire))
        except (DecryptionError, EncodingError) as exc:
            self.events.append(("key_distribution_aborted", str(exc)))
            raise KeyDistributionError(f"shared key message unreadable: {exc}") from None
        self.counters.asym_ops += 1
        if not crypto.verify(generator_key, key, sig):
            self.events.append(("key_distribution_aborted", "bad signature"))
            raise KeyDistributionError(f"shared key from {generator_id} does not verify")
        out = {}
        for name in sorted(recipients):
            if name == generator_id:
                continue
            pk = recipients[name]
            plaintext = messages.encode_key_distribution(generator_id, program_id, key, sig,
                                                         generator_key.byte_len, pk.byte_len)
            out[name] = crypto.seal(pk, plaintext, self.rng)
            self.counters.asym_ops += 1
        if not self.optimized:
            self.retained.extend([wire, *out.values()])
        return out

    def receive(self, last_hop: str, program_id: str, wire: bytes) -> None:
        """Record an overlay delivery. Only the neighbour that handed the
        packet over is visible here."""
        digest = packet_digest(wire)
        self.filter.insert(digest)
        self.observations.append(Observation(self.epoch, last_hop, program_id, digest))

    def broadcast_filter(self) -> DeliveryFilter:
        """Publish the current epoch's filter and start a new one."""
        snap = self.filter.snapshot()
        self.broadcasts.append(snap)
        self.epoch += 1
        self.filter = DeliveryFilter(self.bloom_m, self.bloom_k)
        return snap


def confirm_delivery(snapshot: DeliveryFilter, wire: bytes) -> bool:
    return snapshot.query(packet_digest(wire))
