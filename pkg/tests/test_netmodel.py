import time
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from incentive_metering import netmodel
from incentive_metering.errors import ConfigError, InvalidParameterError
from incentive_metering.netmodel import Stack

# Published packet sizes (bytes) and per-meter transmission times (seconds):
# 12.5 kbps per meter on Wi-SUN, 50 kbps on each WAN segment.
PUBLISHED = {
    "program_list": [(7099, "4.54336"), (5534, "0.88544"), (5992, "0.95872"), (5768, "0.92288")],
    "enrollment": [(1323, "0.84672"), (1078, "0.17248"), (1146, "0.18336"), (1090, "0.17440")],
    "grant": [(1007, "0.64448"), (822, "0.13152"), (890, "0.14240"), (834, "0.13344")],
    "shared_key": [(661, "0.42304"), (566, "0.09056"), (634, "0.10144"), (578, "0.09248")],
    "first_report": [(661, "0.42304"), (566, "0.09056"), (634, "0.10144"), (578, "0.09248")],
    "report": [(345, "0.22080"), (345, "0.05520"), (345, "0.05520"), (345, "0.05520")],
    "key_distribution": [(661, "0.42304"), (566, "0.09056"), (634, "0.10144"), (578, "0.09248")],
}
ORDER = [Stack.WISUN, Stack.LTE_PDCP, Stack.ETHERNET_GTP, Stack.ETHERNET]


def test_all_cells_reproduce():
    t0 = time.perf_counter()
    cells = netmodel.transmission_table()
    elapsed = time.perf_counter() - t0
    assert len(cells) == 28
    for c in cells:
        packet, secs = PUBLISHED[c.message][ORDER.index(c.stack)]
        assert c.packet == packet
        assert abs(float(c.seconds) - float(secs)) <= 1e-9
    assert elapsed < 1.0


def test_worked_cell():
    t = netmodel.transmission_time(netmodel.frame_size(5480, Stack.WISUN), Fraction(250_000, 20))
    assert netmodel.frame_size(5480, "wisun") == 7099
    assert t == Fraction(454336, 100000)


def test_per_meter_bandwidth():
    assert netmodel.DEFAULT_LINKS[Stack.WISUN].per_meter_bw == 12500
    assert netmodel.DEFAULT_LINKS[Stack.ETHERNET].per_meter_bw == 50000


def test_min_bandwidth():
    p = netmodel.REFERENCE_PAYLOADS.values()
    assert netmodel.min_required_bandwidth(p, Stack.WISUN) == 320_000
    for s in netmodel.WAN_PATH:
        assert netmodel.min_required_bandwidth(p, s) == 240_000
    # the largest message fits the deadline at that rate, but not one quantum lower
    largest = netmodel.frame_size(5480, Stack.WISUN)
    assert netmodel.transmission_time(largest, 320_000) <= netmodel.DEFAULT_DEADLINE
    assert netmodel.transmission_time(largest, 280_000) > netmodel.DEFAULT_DEADLINE
    with pytest.raises(InvalidParameterError):
        netmodel.min_required_bandwidth([], Stack.WISUN)


@given(st.sampled_from(list(Stack)), st.integers(1, 20000), st.integers(1, 20000))
def test_frame_size_monotone_and_covers_payload(stack, a, b):
    lo, hi = sorted((a, b))
    assert netmodel.frame_size(lo, stack) <= netmodel.frame_size(hi, stack)
    assert netmodel.frame_size(lo, stack) >= lo


def test_extrapolation_rules():
    # below the first anchor the absolute overhead is kept
    assert netmodel.frame_size(100, Stack.WISUN) == 100 + (345 - 256)
    # beyond the last anchor the overhead ratio is kept, rounded up
    assert netmodel.frame_size(10960, Stack.WISUN) == 14198
    assert netmodel.frame_size(5481, Stack.WISUN) == -(-5481 * 7099 // 5480)
    assert netmodel.frame_size(0, Stack.WISUN) == 0


def test_interpolation_rounds_up():
    # halfway between 512 and 768 on Wi-SUN: overheads 149 and 239 average to 194
    assert netmodel.frame_size(640, Stack.WISUN) == 640 + 194
    assert netmodel.frame_size(513, Stack.WISUN) == 513 + 150


def test_bad_arguments():
    with pytest.raises(ConfigError):
        netmodel.frame_size(10, "carrier-pigeon")
    with pytest.raises(InvalidParameterError):
        netmodel.frame_size(-1, Stack.WISUN)
    with pytest.raises(InvalidParameterError):
        netmodel.transmission_time(10, 0)


def test_custom_table(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("payload,wisun,lte_pdcp,ethernet_gtp,ethernet\n100,150,120,130,110\n200,260,220,230,210\n")
    table = netmodel.FramingTable.load(path)
    assert table.frame_size(150, Stack.WISUN) == 150 + 55
    path.write_text("payload,wisun,lte_pdcp,ethernet_gtp,ethernet\n100,90,120,130,110\n")
    with pytest.raises(ConfigError):
        netmodel.FramingTable.load(path)
    path.write_text("payload,wisun\n100,150\n")
    with pytest.raises(ConfigError):
        netmodel.FramingTable.load(path)


def test_format_table_has_every_row():
    text = netmodel.format_table(netmodel.transmission_table())
    assert "4.54336" in text and text.count("\n") == 7
