import struct
from datetime import datetime, timedelta, timezone
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from incentive_metering import encoding
from incentive_metering.errors import EncodingError
from incentive_metering.programs import Purpose

fields = st.one_of(
    st.binary(max_size=64),
    st.integers(min_value=0, max_value=2**600),
    st.text(max_size=40),
    st.booleans(),
    st.floats(allow_nan=False),
    st.fractions(),
    st.none(),
)


def test_length_prefix_layout():
    assert encoding.encode(b"ab", 258, "x") == b"\x00\x00\x00\x02ab" + b"\x00\x00\x00\x02\x01\x02" + b"\x00\x00\x00\x01x"
    assert encoding.encode(0) == b"\x00\x00\x00\x00"
    assert encoding.encode(None) == b"\x00\x00\x00\x00"
    assert encoding.encode(Fraction(31, 2)) == b"\x00\x00\x00\x0431/2"
    assert encoding.encode(Purpose.TARIFF) == encoding.encode("TariffSpecification")


def test_float_is_big_endian_binary64():
    assert encoding.field_content(1.5) == struct.pack(">d", 1.5)


def test_datetime_whole_seconds():
    t = datetime(2024, 3, 2, tzinfo=timezone.utc)
    assert encoding.as_int(encoding.field_content(t)) == 1709337600
    assert encoding.as_datetime(encoding.field_content(t)) == t
    naive = datetime(2024, 3, 2)
    assert encoding.field_content(naive) == encoding.field_content(t)
    with pytest.raises(EncodingError):
        encoding.field_content(t + timedelta(microseconds=5))


def test_negative_int_rejected():
    with pytest.raises(EncodingError):
        encoding.encode(-1)


def test_unknown_type_rejected():
    with pytest.raises(EncodingError):
        encoding.encode(object())


@given(st.lists(fields, max_size=8))
def test_roundtrip_contents(values):
    blob = encoding.encode(*values)
    assert encoding.decode(blob, len(values)) == [encoding.field_content(v) for v in values]


@given(st.lists(st.binary(max_size=20), min_size=1, max_size=5), st.integers(1, 40))
def test_padding_only_when_allowed(values, pad):
    blob = encoding.encode(*values)
    padded = encoding.pad_to(blob, len(blob) + pad)
    assert encoding.decode(padded, len(values), allow_padding=True) == values
    with pytest.raises(EncodingError):
        encoding.decode(padded, len(values))


@given(st.lists(st.binary(max_size=20), min_size=1, max_size=5), st.binary(min_size=1, max_size=10))
def test_split_returns_tail(values, tail):
    fields_, rest = encoding.split(encoding.encode(*values) + tail, len(values))
    assert fields_ == values and rest == tail


def test_nonzero_padding_rejected():
    blob = encoding.encode(b"x") + b"\x00\x01"
    with pytest.raises(EncodingError):
        encoding.decode(blob, 1, allow_padding=True)


@pytest.mark.parametrize("blob", [b"\x00\x00", b"\x00\x00\x00\x05abc", b"\x00\x00\x00\x01"])
def test_truncation_detected(blob):
    with pytest.raises(EncodingError):
        encoding.decode(blob)


def test_field_count_enforced():
    with pytest.raises(EncodingError):
        encoding.decode(encoding.encode(1, 2), 3)


def test_pad_never_truncates():
    assert encoding.pad_to(b"abcdef", 3) == b"abcdef"
    assert encoding.pad_to(b"ab", None) == b"ab"
    assert encoding.pad_to(b"ab", 4) == b"ab\x00\x00"


def test_interpreters_reject_bad_widths():
    with pytest.raises(EncodingError):
        encoding.as_float(b"\x00" * 4)
    with pytest.raises(EncodingError):
        encoding.as_bool(b"\x02")
    with pytest.raises(EncodingError):
        encoding.as_str(b"\xff")
    with pytest.raises(EncodingError):
        encoding.as_fraction(b"one half")
