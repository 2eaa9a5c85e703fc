import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import keypair_for
from incentive_metering import crypto, messages
from incentive_metering.aggregator import UP_RECIPIENT, Aggregator, confirm_delivery, designate_key_generator
from incentive_metering.errors import ConfigError, InvalidParameterError, KeyDistributionError, RouteError
from incentive_metering.overlay import (SINK, DeliveryFilter, OverlayTopology, RelayPath, packet_digest,
                                        random_path, validate_path)

NODES = [f"n{i:03d}" for i in range(12)]


# -- topology and paths --------------------------------------------------------

def test_ring_and_clique_shapes():
    ring = OverlayTopology.ring(NODES)
    assert ring.neighbours("n000") == ["AGG", "n001", "n011"]
    clique = OverlayTopology.clique(NODES)
    assert len(clique.neighbours("n005")) == len(NODES)


def test_disconnected_topology_rejected():
    with pytest.raises(ConfigError):
        OverlayTopology.from_edges(["a", "b"], [("a", SINK)])
    with pytest.raises(ConfigError):
        OverlayTopology.from_edges(["a"], [("a", "zz")])
    with pytest.raises(ConfigError):
        OverlayTopology.from_edges(["a"], [("a", "a")])


def test_edge_list_file(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("# star\na AGG\nb a\nc, a\n")
    topo = OverlayTopology.load(path, ["a", "b", "c"])
    assert topo.adjacent("b", "a") and not topo.adjacent("b", SINK)
    path.write_text("a b c\n")
    with pytest.raises(ConfigError, match=":1:"):
        OverlayTopology.load(path, ["a", "b", "c"])


def test_one_hop_path_rejected_under_two_hop_minimum():
    topo = OverlayTopology.ring(NODES)
    with pytest.raises(RouteError):
        validate_path(RelayPath(("n000", SINK)), topo, 2)
    validate_path(RelayPath(("n000", SINK)), topo, 1)
    with pytest.raises(RouteError):
        validate_path(RelayPath(("n000", "n005", SINK)), topo, 2)  # not neighbours
    with pytest.raises(RouteError):
        validate_path(RelayPath(("n000", "n001", "n000", SINK)), topo, 2)
    with pytest.raises(RouteError):
        validate_path(RelayPath(("n000", "n001")), topo, 1)


@given(st.integers(0, 11), st.integers(0, 2**32), st.integers(2, 4))
def test_random_paths_are_valid(src, seed, min_hops):
    topo = OverlayTopology.ring(NODES)
    path = random_path(topo, NODES[src], random.Random(seed), min_hops, min_hops + 1)
    validate_path(path, topo, min_hops)
    assert path.source == NODES[src] and min_hops <= len(path) <= min_hops + 1
    assert path.last_hop != NODES[src]


def test_no_path_when_isolated():
    topo = OverlayTopology.from_edges(["a", "b"], [("a", SINK), ("b", SINK)])
    with pytest.raises(RouteError):
        random_path(topo, "a", random.Random(0), 2, 2)


def test_last_hop_hides_source_on_clique():
    """On a clique the sink's view of a report (the last relay) is uniform
    over the other meters, whoever sent it."""
    topo = OverlayTopology.clique(NODES)
    rng = random.Random("hide")
    for src in ("n000", "n007"):
        seen = Counter(random_path(topo, src, rng, 2, 3).last_hop for _ in range(11_000))
        assert src not in seen
        counts = [seen[n] for n in NODES if n != src]
        assert stats.chisquare(counts).pvalue > 0.001


# -- delivery filter -----------------------------------------------------------

@settings(max_examples=25)
@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=300, unique=True))
def test_filter_has_no_false_negatives(items):
    f = DeliveryFilter(4096, 5)
    for it in items:
        f.insert(packet_digest(it))
    assert all(packet_digest(it) in f for it in items)
    snap = f.snapshot()
    f.insert(b"later")
    assert snap.count == len(items) and all(snap.query(packet_digest(it)) for it in items)


def test_analytic_fpr_formula():
    f = DeliveryFilter(16384, 7)
    assert f.analytic_fpr(0) == 0
    assert math.isclose(f.analytic_fpr(560), (1 - math.exp(-7 * 560 / 16384)) ** 7)
    assert len(f.to_bytes()) == 2048


def test_measured_fpr_within_twice_analytic():
    f = DeliveryFilter(16384, 7)
    rng = random.Random("fpr")
    for _ in range(2000):
        f.insert(crypto.random_bytes(rng, 32))
    probes = 40_000
    fp = sum(f.query(crypto.random_bytes(rng, 32)) for _ in range(probes))
    expected = f.analytic_fpr()
    assert expected / 2 <= fp / probes <= expected * 2


def test_filter_parameters_validated():
    with pytest.raises(ConfigError):
        DeliveryFilter(0, 3)


# -- aggregator ----------------------------------------------------------------

def test_designation_uniform():
    rng = random.Random("designate")
    pool = [f"SM-{i:04d}" for i in range(20)]
    seen = Counter(designate_key_generator(pool, rng) for _ in range(20_000))
    assert set(seen) == set(pool)
    assert stats.chisquare([seen[p] for p in pool]).pvalue > 0.001
    with pytest.raises(InvalidParameterError):
        designate_key_generator([], rng)


def _key_message(gen="SM-0000", signer=None):
    rng = random.Random(4)
    key = crypto.new_shared_key(rng)
    sig = crypto.sign((signer or keypair_for(gen)).private, key)
    body = messages.encode_shared_key(key, sig, 64)
    return key, crypto.seal(keypair_for("AGG").public, body, rng)


def test_key_distribution_counts_and_recipients():
    agg = Aggregator(keypair_for("AGG"), random.Random(0))
    key, wire = _key_message()
    ids = [f"SM-{i:04d}" for i in range(5)]
    recips = {m: keypair_for(m).public for m in ids}
    recips[UP_RECIPIENT] = keypair_for("UP").public
    out = agg.distribute_shared_key(wire, "SM-0000", keypair_for("SM-0000").public, "pr-01", recips)
    assert set(out) == set(ids[1:]) | {UP_RECIPIENT}
    assert agg.counters.asym_ops == len(ids) + 2
    gen_id, pid, got, _ = messages.decode_key_distribution(crypto.open_sealed(keypair_for("SM-0003").private, out["SM-0003"]))
    assert (gen_id, pid, got) == ("SM-0000", "pr-01", key)


def test_key_distribution_refuses_forgery():
    agg = Aggregator(keypair_for("AGG"), random.Random(0))
    _, wire = _key_message(signer=keypair_for("SM-0001"))
    with pytest.raises(KeyDistributionError):
        agg.distribute_shared_key(wire, "SM-0000", keypair_for("SM-0000").public, "pr-01", {})
    with pytest.raises(KeyDistributionError):
        agg.distribute_shared_key(b"\x01" * 200, "SM-0000", keypair_for("SM-0000").public, "pr-01", {})
    assert [e for e, _ in agg.events] == ["key_distribution_aborted"] * 2


def test_delivery_confirmation_per_epoch():
    agg = Aggregator(keypair_for("AGG"), random.Random(0))
    agg.receive("n003", "pr-01", b"packet-a")
    first = agg.broadcast_filter()
    agg.receive("n004", "pr-01", b"packet-b")
    second = agg.broadcast_filter()
    assert confirm_delivery(first, b"packet-a") and confirm_delivery(second, b"packet-b")
    assert agg.epoch == 2 and [o.last_hop for o in agg.observations] == ["n003", "n004"]
