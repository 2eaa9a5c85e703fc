"""Unidirectional relay overlay among neighbouring meters, and the bloom
filter the aggregator broadcasts so meters can confirm delivery."""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, RouteError

SINK = "AGG"


@dataclass
class OverlayTopology:
    nodes: list[str]
    adjacency: dict[str, set[str]]
    sink: str = SINK

    def __post_init__(self):
        self.adjacency.setdefault(self.sink, set())
        for node in self.nodes:
            self.adjacency.setdefault(node, set())
        self._check_connected()

    def _check_connected(self) -> None:
        seen = {self.sink}
        frontier = [self.sink]
        while frontier:
            node = frontier.pop()
            for nxt in sorted(self.adjacency[node]):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        unreachable = [n for n in self.nodes if n not in seen]
        if unreachable:
            raise ConfigError(f"nodes without a path to the sink: {unreachable[:5]}")

    def neighbours(self, node: str) -> list[str]:
        return sorted(self.adjacency[node])

    def adjacent(self, a: str, b: str) -> bool:
        return b in self.adjacency.get(a, ())

    @classmethod
    def from_edges(cls, nodes: list[str], edges, sink: str = SINK) -> "OverlayTopology":
        adj: dict[str, set[str]] = {n: set() for n in [*nodes, sink]}
        for a, b in edges:
            if a not in adj or b not in adj:
                raise ConfigError(f"edge {a}-{b} names an unknown node")
            if a == b:
                raise ConfigError(f"self loop at {a}")
            adj[a].add(b)
            adj[b].add(a)
        return cls(list(nodes), adj, sink)

    @classmethod
    def ring(cls, nodes: list[str], sink: str = SINK) -> "OverlayTopology":
        """Each meter links to its two ring neighbours and to the sink."""
        edges = [(n, sink) for n in nodes]
        if len(nodes) > 1:
            edges += [(nodes[i], nodes[(i + 1) % len(nodes)]) for i in range(len(nodes))
                      if nodes[i] != nodes[(i + 1) % len(nodes)]]
        return cls.from_edges(nodes, edges, sink)

    @classmethod
    def clique(cls, nodes: list[str], sink: str = SINK) -> "OverlayTopology":
        edges = [(n, sink) for n in nodes]
        edges += [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]]
        return cls.from_edges(nodes, edges, sink)

    @classmethod
    def load(cls, path: str | Path, nodes: list[str], sink: str = SINK) -> "OverlayTopology":
        """Edge list file: one ``a b`` pair per line, ``#`` comments."""
        edges = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected two node names")
            edges.append((parts[0], parts[1]))
        return cls.from_edges(nodes, edges, sink)


@dataclass(frozen=True)
class RelayPath:
    hops: tuple[str, ...]

    @property
    def source(self) -> str:
        return self.hops[0]

    @property
    def last_hop(self) -> str:
        return self.hops[-2]

    def __len__(self) -> int:
        return len(self.hops) - 1  # number of links traversed

    def links(self):
        return list(zip(self.hops, self.hops[1:]))


def validate_path(path: RelayPath, topo: OverlayTopology, min_hops: int) -> None:
    if len(path.hops) < 2 or path.hops[-1] != topo.sink:
        raise RouteError("a relay path must end at the sink")
    if len(path) < min_hops:
        raise RouteError(f"path of {len(path)} hop(s) is below the minimum of {min_hops}")
    if len(set(path.hops)) != len(path.hops):
        raise RouteError("relay path revisits a node")
    for a, b in path.links():
        if not topo.adjacent(a, b):
            raise RouteError(f"{a} and {b} are not neighbours")


def random_path(topo: OverlayTopology, source: str, rng: random.Random, min_hops: int = 2,
                max_hops: int | None = None, max_tries: int = 1000) -> RelayPath:
    """Random simple walk from ``source`` that relays through at least
    ``min_hops - 1`` other meters before reaching the sink."""
    max_hops = max_hops or max(min_hops, 3)
    for _ in range(max_tries):
        hops = [source]
        target = rng.randint(min_hops, max_hops)
        while len(hops) - 1 < target - 1:
            options = [n for n in topo.neighbours(hops[-1]) if n != topo.sink and n not in hops]
            if not options:
                break
            hops.append(rng.choice(options))
        if len(hops) - 1 == target - 1 and topo.adjacent(hops[-1], topo.sink):
            path = RelayPath(tuple(hops) + (topo.sink,))
            validate_path(path, topo, min_hops)
            return path
    raise RouteError(f"no relay path of at least {min_hops} hops from {source}")


class DeliveryFilter:
    """Bloom filter over packet digests; k indices by double hashing."""

    def __init__(self, m: int = 16384, k: int = 7):
        if m <= 0 or k <= 0:
            raise ConfigError("bloom filter needs positive m and k")
        self.m = m
        self.k = k
        self.bits = bytearray((m + 7) // 8)
        self.count = 0

    def _indices(self, digest: bytes):
        h = hashlib.sha256(digest).digest()
        h1 = int.from_bytes(h[:8], "big")
        h2 = int.from_bytes(h[8:16], "big") | 1
        return [(h1 + i * h2) % self.m for i in range(self.k)]

    def insert(self, digest: bytes) -> None:
        for i in self._indices(digest):
            self.bits[i >> 3] |= 1 << (i & 7)
        self.count += 1

    def query(self, digest: bytes) -> bool:
        return all(self.bits[i >> 3] >> (i & 7) & 1 for i in self._indices(digest))

    __contains__ = query

    def snapshot(self) -> "DeliveryFilter":
        copy = DeliveryFilter(self.m, self.k)
        copy.bits = bytearray(self.bits)
        copy.count = self.count
        return copy

    def to_bytes(self) -> bytes:
        return bytes(self.bits)

    def analytic_fpr(self, n: int | None = None) -> float:
        n = self.count if n is None else n
        return (1 - math.exp(-self.k * n / self.m)) ** self.k


def packet_digest(wire: bytes) -> bytes:
    return hashlib.sha256(wire).digest()
