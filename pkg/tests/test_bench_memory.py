from incentive_metering.sim.bench import REFERENCE, BenchRow, format_bench, measure
from incentive_metering.sim.memory import ComponentSizes, estimate_memory, measure_peak


def test_estimate_with_zero_sizes_is_zero():
    est = estimate_memory(28, 20, ComponentSizes())
    assert est.total == 0


def test_slot_counts_for_four_week_program():
    est = estimate_memory(28, 20, ComponentSizes.for_modulus(1024))
    assert (est.meter_cipher_slots, est.meter_random_values) == (31, 32)


def test_estimate_scales_with_participants_and_key():
    s = ComponentSizes.for_modulus(1024)
    a, b = estimate_memory(28, 20, s), estimate_memory(28, 40, s)
    assert b.aggregator - a.aggregator == 20 * s.cipher and b.meter == a.meter
    assert estimate_memory(28, 20, ComponentSizes.for_modulus(2048)).total > a.total
    # tens of kilobytes, far below the measured process footprint
    assert a.total < 64 * 1024


def test_measured_peak_is_bounded():
    assert measure_peak(512) < 16 * 2**20


def test_measure_row():
    row = measure(512)
    assert row.t_sm > 0 and row.t_up > 0 and row.t_agg >= 0
    assert row.t_vas == row.t_sm + row.t_agg + row.t_up


def test_format_includes_reference():
    text = format_bench([BenchRow(1024, 0.1, 0.01, 0.2)])
    assert f"{REFERENCE[1024][0]:.5f}" in text and "0.31000" in text
