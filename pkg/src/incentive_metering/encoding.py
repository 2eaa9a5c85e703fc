"""Deterministic length-prefixed binary encoding.

Every signed, MACed or encrypted structure is a sequence of fields. Each field
is a 4-byte big-endian length followed by that many content bytes:

* ``bytes``     verbatim
* ``int``       minimal big-endian magnitude (``0`` encodes as zero bytes)
* ``bool``      as the int 0 or 1
* ``str``       UTF-8
* ``float``     IEEE-754 binary64, big-endian
* ``datetime``  whole seconds since the Unix epoch (naive values are UTC)
* ``Fraction``  its ``str()`` form, e.g. ``"31/2"``
* ``Enum``      the encoding of its ``value``
* ``None``      an empty field

Decoding returns raw field contents; callers interpret them with the
``as_*`` helpers because the encoding is not self-describing.
"""

from __future__ import annotations

import struct
from datetime import datetime, timezone
from enum import Enum
from fractions import Fraction

from .errors import EncodingError

LEN = struct.Struct(">I")
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def int_to_bytes(value: int) -> bytes:
    if value < 0:
        raise EncodingError("negative integers have no canonical encoding")
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def field_content(value) -> bytes:
    if value is None:
        return b""
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value)
    if isinstance(value, Enum):
        return field_content(value.value)
    if isinstance(value, bool):
        return int_to_bytes(int(value))
    if isinstance(value, int):
        return int_to_bytes(value)
    if isinstance(value, float):
        return struct.pack(">d", value)
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, Fraction):
        return str(value).encode("ascii")
    if isinstance(value, datetime):
        return int_to_bytes(to_epoch(value))
    raise EncodingError(f"no canonical encoding for {type(value).__name__}")


def encode_field(value) -> bytes:
    content = field_content(value)
    return LEN.pack(len(content)) + content


def encode(*values) -> bytes:
    return b"".join(encode_field(v) for v in values)


def decode(blob: bytes, count: int | None = None, *, allow_padding: bool = False) -> list[bytes]:
    """Split ``blob`` into field contents.

    With ``count`` set, exactly that many fields are read. Trailing bytes are
    an error unless ``allow_padding`` is set, in which case they must all be
    zero.
    """
    fields: list[bytes] = []
    pos = 0
    end = len(blob)
    while pos < end and (count is None or len(fields) < count):
        if end - pos < LEN.size:
            raise EncodingError(f"truncated length prefix at offset {pos}")
        (length,) = LEN.unpack_from(blob, pos)
        pos += LEN.size
        if length > end - pos:
            raise EncodingError(f"field at offset {pos - LEN.size} overruns buffer")
        fields.append(bytes(blob[pos:pos + length]))
        pos += length
    if count is not None and len(fields) != count:
        raise EncodingError(f"expected {count} fields, found {len(fields)}")
    rest = blob[pos:]
    if rest and not (allow_padding and not any(rest)):
        raise EncodingError(f"{len(rest)} unexpected trailing bytes")
    return fields


def split(blob: bytes, count: int) -> tuple[list[bytes], bytes]:
    """Read ``count`` leading fields and return them with the unread tail."""
    fields: list[bytes] = []
    pos = 0
    for _ in range(count):
        if len(blob) - pos < LEN.size:
            raise EncodingError(f"truncated length prefix at offset {pos}")
        (length,) = LEN.unpack_from(blob, pos)
        pos += LEN.size
        if length > len(blob) - pos:
            raise EncodingError(f"field at offset {pos - LEN.size} overruns buffer")
        fields.append(bytes(blob[pos:pos + length]))
        pos += length
    return fields, bytes(blob[pos:])


def pad_to(blob: bytes, size: int | None) -> bytes:
    """Right-pad with zero bytes up to ``size``; longer inputs pass unchanged."""
    if size is None or len(blob) >= size:
        return blob
    return blob + bytes(size - len(blob))


def as_int(content: bytes) -> int:
    return int.from_bytes(content, "big")


def as_bool(content: bytes) -> bool:
    value = as_int(content)
    if value not in (0, 1):
        raise EncodingError(f"invalid boolean {value}")
    return bool(value)


def as_str(content: bytes) -> str:
    try:
        return content.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(str(exc)) from None


def as_float(content: bytes) -> float:
    if len(content) != 8:
        raise EncodingError(f"float field must be 8 bytes, got {len(content)}")
    return struct.unpack(">d", content)[0]


def as_fraction(content: bytes) -> Fraction:
    try:
        return Fraction(as_str(content))
    except ValueError as exc:
        raise EncodingError(str(exc)) from None


def as_datetime(content: bytes) -> datetime:
    return from_epoch(as_int(content))


def to_epoch(value: datetime) -> int:
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    delta = value - EPOCH
    if delta.microseconds:
        raise EncodingError("datetimes are encoded at whole-second resolution")
    return delta.days * 86400 + delta.seconds


def from_epoch(seconds: int) -> datetime:
    return datetime.fromtimestamp(seconds, tz=timezone.utc)
