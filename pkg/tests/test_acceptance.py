"""Acceptance criteria 1-10, each reported as one PASS/FAIL line."""

import random
import statistics
import time
from contextlib import contextmanager
from fractions import Fraction

import pytest

from conftest import ACCEPTANCE, keypair_for
from test_crypto import blind_round_trip_failures, count_false_accepts
from test_netmodel import ORDER, PUBLISHED
from test_utility import chain_oracle_comparison, redemption_schedules
from incentive_metering import netmodel
from incentive_metering.crypto import SUPPORTED_BITS
from incentive_metering.meter import CoarseReading, NoiseParams, perturb
from incentive_metering.programs import ProgramSpec, Purpose, compute_reward
from incentive_metering.sim.bench import REFERENCE, benchmark, format_bench
from incentive_metering.sim.harness import run
from incentive_metering.sim.memory import measure_peak
from incentive_metering.sim.scenario import AdversarySpec, ScenarioConfig
from incentive_metering.utility import Redemption


@contextmanager
def criterion(n: int, title: str):
    try:
        yield
    except BaseException as exc:
        line = f"criterion {n:>2} FAIL  {title}: {exc}".splitlines()[0]
        ACCEPTANCE[n] = line
        print(line)
        raise
    ACCEPTANCE[n] = f"criterion {n:>2} PASS  {title}"
    print(ACCEPTANCE[n])


def test_1_network_table():
    with criterion(1, "transmission-time table, 28 cells within 1e-9 s, under 1 s"):
        t0 = time.perf_counter()
        cells = netmodel.transmission_table()
        elapsed = time.perf_counter() - t0
        assert len(cells) == 28
        for c in cells:
            packet, secs = PUBLISHED[c.message][ORDER.index(c.stack)]
            assert c.packet == packet, (c.message, c.stack, c.packet)
            assert abs(float(c.seconds) - float(secs)) <= 1e-9, (c.message, c.stack, c.seconds)
        assert netmodel.transmission_time(7099, 12_500) == Fraction("4.54336")
        assert elapsed < 1.0, f"{elapsed:.3f} s"


def test_2_reward():
    with criterion(2, "reward for (12, 7, DataDriven, 5) is (15, 45, 24h)"):
        t = compute_reward(12, 7, Purpose.DATA_DRIVEN, 5)
        assert (t.value, t.valid_days, t.delay_label) == (15, 45, "24h"), t


def test_3_counters():
    with criterion(3, "operation counters match the closed forms exactly, under 10 s"):
        cfg = ScenarioConfig(programs=(ProgramSpec(4, 7, Purpose.DATA_DRIVEN, 1),),
                             participation=(("pr-01", 20),), threshold=10, check_counters=True)
        t0 = time.perf_counter()
        check = run(cfg).metrics["counter_check"]   # raises CounterMismatch on any difference
        elapsed = time.perf_counter() - t0
        assert check["participants"] == 20 and check["n"] == 28
        assert (check["meter"]["asym_ops"], check["meter"]["hashes"], check["meter"]["macs"]) == (36, 27, 28)
        assert check["aggregator"]["asym_ops"] == 22
        assert (check["utility"]["asym_ops"], check["utility"]["db_ops"]) == (40, 83)
        assert elapsed < 10.0, f"{elapsed:.2f} s"


def test_4_timing_trend():
    with criterion(4, "runtime strictly increases with key size and meter time exceeds utility time"):
        rows = benchmark(SUPPORTED_BITS, repeats=5)
        print()
        print(format_bench(rows))
        ref = [REFERENCE[r.bits] for r in rows]
        assert all(a[2] < b[2] for a, b in zip(ref, ref[1:]))  # the published column is monotone
        totals = [r.t_vas for r in rows]
        assert all(a < b for a, b in zip(totals, totals[1:])), f"t_vas not monotone: {totals}"
        behind = [r.bits for r in rows if not r.t_sm > r.t_up]
        assert not behind, f"utility time exceeds meter time at {behind} bits"


def test_5_memory():
    with criterion(5, "peak traced memory for a one-meter run under 16 MB"):
        peak = measure_peak(1024, freq=4, pd=7)
        print(f"peak {peak / 2**20:.2f} MiB")
        assert peak < 16 * 2**20, f"{peak / 2**20:.2f} MiB"


def test_6_crypto():
    with criterion(6, "blind signatures, single-bit corruption and chain oracle"):
        kp = keypair_for("UP", 1024)
        assert blind_round_trip_failures(kp, 1000, random.Random("acc-blind")) == 0
        assert count_false_accepts(kp, 10_000, random.Random("acc-flip")) == 0
        checked, mismatches = chain_oracle_comparison(8)
        assert mismatches == 0 and checked > 0


def test_7_noise():
    with criterion(7, "noise std within 2%, linear in nsc, identity at nsc=0"):
        c = CoarseReading(0, Fraction(1000))

        def std(nsc, seed):
            np_ = NoiseParams(Fraction(1, 2), Fraction(2), nsc)
            rng = random.Random(seed)
            return statistics.pstdev(perturb(c, np_, rng, clamp=False)[0].value - 1000 for _ in range(100_000))

        s1 = std(1, "acc-noise-1")
        assert abs(s1 - 4.0) / 4.0 < 0.02, s1
        ratio = std(5, "acc-noise-5") / std(1, "acc-noise-1b")
        assert abs(ratio - 5) / 5 < 0.02, ratio
        rng = random.Random(0)
        for v in (Fraction(0), Fraction(1, 3), Fraction(12345, 7)):
            out, _ = perturb(CoarseReading(0, v), NoiseParams(Fraction(1, 2), 2, 0), rng)
            assert out.value == v and type(out.value) is Fraction


def test_8_end_to_end():
    with criterion(8, "560 records, 20 tokens granted once, 100 concurrent schedules, small roster cancels"):
        res = run(ScenarioConfig())
        m = res.metrics
        assert m["archive_records"] == 560
        assert m["tokens"]["issued"] == 20
        assert m["tokens"]["redemptions"] == {"Granted": 20}
        up = res.simulation.up
        for rel in res.simulation.releases.values():
            assert up.redeem_token(rel.token, rel.signature, rel.token.active) is Redemption.ALREADY_SPENT
        entries = up.ledger.entries()
        for results in redemption_schedules(up, entries, 100, random.Random("acc-schedules")):
            granted = [uid for uid, r in results if r is Redemption.GRANTED]
            assert sorted(granted) == sorted(e.token.uid for e in entries)
            assert all(r in (Redemption.GRANTED, Redemption.ALREADY_SPENT) for _, r in results)
        small = run(ScenarioConfig(participation=(("pr-01", 5),))).metrics
        assert small["programs"]["pr-01"]["decision"] == "cancel"
        assert small["archive_records"] == 0


def test_9_privacy():
    with criterion(9, "no plaintext readings or ids on the wire or at rest; full tampering accepts nothing"):
        eav = run(ScenarioConfig(adversary=AdversarySpec("eavesdrop")))
        scan = eav.metrics["adversary"]["eavesdrop"]
        assert scan["packets"] > 0 and scan["leaks"] == [], scan["leaks"]
        state = eav.simulation.up.persistent_state()
        for mid in eav.config.meter_ids():
            assert mid.encode() not in state
            assert mid not in eav.dataset_csv and mid not in eav.ledger_ndjson
        for adv in (AdversarySpec("tamper", rate=1.0),
                    AdversarySpec("tamper", ("nan",), 1.0, kinds=("report",))):
            m = run(ScenarioConfig(adversary=adv)).metrics
            assert m["reports"]["accepted"] == 0 and m["archive_records"] == 0
            assert m["adversary"]["tampered_rejected"] == m["adversary"]["tampered"] > 0
        assert m["reports"]["sent"] == 560  # reports did flow and were all refused


def test_10_determinism(tmp_path):
    with criterion(10, "two seed-42 runs are byte-identical"):
        a = run(ScenarioConfig(seed=42)).write(tmp_path / "a")
        b = run(ScenarioConfig(seed=42)).write(tmp_path / "b")
        for name in ("metrics.json", "events.ndjson", "dataset.csv", "ledger.ndjson", "trace.csv"):
            assert a[name].read_bytes() == b[name].read_bytes(), name


@pytest.fixture(scope="module", autouse=True)
def _banner():
    yield
    print()
    for n in sorted(ACCEPTANCE):
        print(ACCEPTANCE[n])
