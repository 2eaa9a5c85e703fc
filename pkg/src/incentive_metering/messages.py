"""Wire formats of every protocol message.

Plaintexts are canonical encodings, zero-padded so that the sealed envelope
reaches the reference payload size for the configured modulus. With 1024-bit
keys the envelope overhead is 144 bytes, so for instance a report plaintext
is padded to 112 bytes to give a 256-byte payload. Larger moduli can exceed
the reference sizes; padding never truncates.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from fractions import Fraction

from . import crypto, encoding
from .crypto import Signature
from .errors import EncodingError

TARGET_SIZES = {
    "enrollment": 1024,
    "grant": 768,
    "shared_key": 512,
    "key_distribution": 512,
    "first_report": 512,
    "report": 256,
}

UID_LEN = 16
PSEUDONYM_LEN = 16


def plaintext_budget(kind: str, modulus_len: int) -> int:
    return TARGET_SIZES[kind] - crypto.envelope_overhead(modulus_len)


def sig_bytes(sig: Signature, modulus_len: int) -> bytes:
    return sig.value.to_bytes(modulus_len, "big")


def sig_from(content: bytes, key_id: str = "") -> Signature:
    return Signature(encoding.as_int(content), key_id)


@dataclass(frozen=True)
class Token:
    value: Fraction
    exp: datetime
    active: datetime
    uid: bytes

    def __post_init__(self):
        if not self.active < self.exp:
            raise ValueError("token must become active before it expires")
        if len(self.uid) != UID_LEN:
            raise ValueError("token uid must be 16 bytes")

    def encode(self) -> bytes:
        return encoding.encode(self.value, self.exp, self.active, self.uid)

    @classmethod
    def decode(cls, blob: bytes) -> "Token":
        f = encoding.decode(blob, 4)
        try:
            return cls(encoding.as_fraction(f[0]), encoding.as_datetime(f[1]),
                       encoding.as_datetime(f[2]), f[3])
        except ValueError as exc:
            raise EncodingError(str(exc)) from None


# -- enrollment (meter -> UP) -----------------------------------------------

def enrollment_message(blinded: int, program_record: bytes) -> bytes:
    """The signed part of an enrollment: blinded credential and program."""
    return encoding.encode(blinded, program_record)


def encode_enrollment(meter_id: str, blinded: int, program_record: bytes, sig: Signature,
                      modulus_len: int) -> bytes:
    blob = encoding.encode(meter_id, blinded, program_record, sig_bytes(sig, modulus_len))
    return encoding.pad_to(blob, plaintext_budget("enrollment", modulus_len))


def decode_enrollment(blob: bytes):
    f = encoding.decode(blob, 4, allow_padding=True)
    return encoding.as_str(f[0]), encoding.as_int(f[1]), f[2], sig_from(f[3])


# -- grant (UP -> meter) -------------------------------------------------------

def grant_message(blind_sig: Signature, token: Token, token_sig: Signature, modulus_len: int) -> bytes:
    return encoding.encode(sig_bytes(blind_sig, modulus_len), token.encode(),
                           sig_bytes(token_sig, modulus_len))


def encode_grant(message: bytes, message_sig: Signature, modulus_len: int) -> bytes:
    blob = message + encoding.encode(sig_bytes(message_sig, modulus_len))
    return encoding.pad_to(blob, plaintext_budget("grant", modulus_len))


def decode_grant(blob: bytes):
    """Returns (signed message bytes, blind sig, token, token sig, message sig)."""
    f, rest = encoding.split(blob, 3)
    message = encoding.encode(*f)
    (msig,) = encoding.decode(rest, 1, allow_padding=True)
    return message, sig_from(f[0]), Token.decode(f[1]), sig_from(f[2]), sig_from(msig)


# -- shared key ------------------------------------------------------------

def encode_shared_key(key: bytes, sig: Signature, modulus_len: int) -> bytes:
    blob = encoding.encode(key, sig_bytes(sig, modulus_len))
    return encoding.pad_to(blob, plaintext_budget("shared_key", modulus_len))


def decode_shared_key(blob: bytes):
    f = encoding.decode(blob, 2, allow_padding=True)
    return f[0], sig_from(f[1])


def encode_key_distribution(generator_id: str, program_id: str, key: bytes, sig: Signature,
                            modulus_len: int, recipient_modulus_len: int) -> bytes:
    blob = encoding.encode(generator_id, program_id, key, sig_bytes(sig, modulus_len))
    return encoding.pad_to(blob, plaintext_budget("key_distribution", recipient_modulus_len))


def decode_key_distribution(blob: bytes):
    f = encoding.decode(blob, 4, allow_padding=True)
    return encoding.as_str(f[0]), encoding.as_str(f[1]), f[2], sig_from(f[3])


# -- anonymous reports --------------------------------------------------------

def mac_input(value: float, pseudonym: bytes) -> bytes:
    return encoding.encode(float(value), pseudonym)


@dataclass(frozen=True)
class ReportPayload:
    credential: bytes
    value: float
    pseudonym: bytes
    extras: bytes
    tag: bytes
    anchor_sig: Signature | None = None

    def encode(self, modulus_len: int) -> bytes:
        blob = encoding.encode(self.credential, float(self.value), self.pseudonym, self.extras, self.tag)
        kind = "report"
        if self.anchor_sig is not None:
            blob += encoding.encode(sig_bytes(self.anchor_sig, modulus_len))
            kind = "first_report"
        return encoding.pad_to(blob, plaintext_budget(kind, modulus_len))

    @classmethod
    def decode(cls, blob: bytes) -> "ReportPayload":
        f, rest = encoding.split(blob, 5)
        sig = None
        if any(rest):
            (raw,) = encoding.decode(rest, 1, allow_padding=True)
            sig = sig_from(raw)
        if len(f[0]) != crypto.HASH_LEN or len(f[2]) != PSEUDONYM_LEN or len(f[4]) != crypto.MAC_LEN:
            raise EncodingError("report field has the wrong width")
        return cls(f[0], encoding.as_float(f[1]), f[2], f[3], f[4], sig)


# -- cancellation and redemption ------------------------------------------

def cancel_message(program_id: str) -> bytes:
    return encoding.encode("cancel", program_id)


def encode_redemption(token: Token, token_sig: Signature, modulus_len: int) -> bytes:
    return encoding.encode(token.encode(), sig_bytes(token_sig, modulus_len))


def decode_redemption(blob: bytes):
    f = encoding.decode(blob, 2)
    return Token.decode(f[0]), sig_from(f[1])
