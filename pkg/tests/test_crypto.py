import hashlib
import random

import gmpy2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import keypair_for
from incentive_metering import crypto
from incentive_metering.errors import ConfigError, DecryptionError, InvalidParameterError


def hmac_sha256_by_hand(key: bytes, msg: bytes) -> bytes:
    block = key.ljust(64, b"\x00")
    inner = hashlib.sha256(bytes(b ^ 0x36 for b in block) + msg).digest()
    return hashlib.sha256(bytes(b ^ 0x5C for b in block) + inner).digest()


def fdh_oracle(msg: bytes, n: int) -> int:
    width = (n.bit_length() + 7) // 8 + 16
    stream = b"".join(hashlib.sha256(b"FDH" + i.to_bytes(4, "big") + msg).digest() for i in range(width // 32 + 1))
    return int.from_bytes(stream[:width], "big") % n


@pytest.mark.parametrize("bits", [128, 256, 512, 1024])
def test_keygen_structure(bits):
    kp = crypto.keygen(bits, random.Random(bits))
    sk = kp.private
    assert sk.n.bit_length() == bits
    assert gmpy2.is_prime(sk.p) and gmpy2.is_prime(sk.q) and sk.p != sk.q
    assert sk.p * sk.q == kp.public.n
    assert kp.public.e == 65537
    assert (kp.public.e * sk.d) % gmpy2.lcm(sk.p - 1, sk.q - 1) == 1
    x = random.Random(1).randrange(sk.n)
    assert sk.power(x) == int(gmpy2.powmod(x, sk.d, sk.n))


def test_keygen_deterministic_and_rejects_odd_sizes():
    a = crypto.keygen(512, random.Random("same"))
    b = crypto.keygen(512, random.Random("same"))
    assert a.public == b.public
    with pytest.raises(ConfigError):
        crypto.keygen(768, random.Random(0))


def test_hash_is_sha256():
    assert crypto.H(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


@given(st.binary(max_size=200))
def test_fdh_matches_oracle(msg):
    n = keypair_for("UP").public.n
    assert crypto.fdh(msg, n) == fdh_oracle(msg, n)


@given(st.binary(min_size=32, max_size=32), st.binary(max_size=300))
def test_mac_matches_hand_hmac(key, msg):
    assert crypto.mac(key, msg) == hmac_sha256_by_hand(key, msg)


def test_mac_key_length_enforced():
    with pytest.raises(InvalidParameterError):
        crypto.mac(b"short", b"m")


def test_sign_matches_textbook_rsa():
    kp = keypair_for("UP")
    msg = b"catalog"
    sig = crypto.sign(kp.private, msg)
    assert sig.value == int(gmpy2.powmod(fdh_oracle(msg, kp.public.n), kp.private.d, kp.public.n))
    assert crypto.verify(kp.public, msg, sig)
    assert not crypto.verify(kp.public, msg + b"!", sig)
    assert not crypto.verify(kp.public, msg, crypto.Signature(kp.public.n))


def blind_round_trip_failures(kp, trials: int, rng) -> int:
    """Randomized blind-sign round trips; a trial fails unless the unblinded
    signature verifies and equals the ordinary RSA-FDH signature."""
    failures = 0
    for _ in range(trials):
        msg = crypto.random_bytes(rng, rng.randrange(1, 64))
        blinded, bf = crypto.blind(msg, kp.public, rng)
        sig = crypto.unblind(crypto.sign_blinded(blinded, kp.private), bf)
        ok = (blinded != crypto.fdh(msg, kp.public.n) and crypto.verify(kp.public, msg, sig)
              and sig == crypto.sign(kp.private, msg))
        failures += not ok
    return failures


def test_blind_sign_round_trips():
    assert blind_round_trip_failures(keypair_for("UP"), 1000, random.Random("blind-trials")) == 0


def test_blinding_factor_not_in_repr():
    _, bf = crypto.blind(b"m", keypair_for("UP").public, random.Random(0))
    assert str(bf.r) not in repr(bf)


def test_sign_blinded_range():
    kp = keypair_for("UP")
    with pytest.raises(InvalidParameterError):
        crypto.sign_blinded(kp.public.n, kp.private)


@pytest.mark.parametrize("bits", [512, 1024, 2048])
def test_envelope_overhead(bits):
    kp = keypair_for("ENV", bits)
    k = bits // 8
    wire = crypto.seal(kp.public, b"x" * 100, random.Random(0))
    assert len(wire) == 100 + k + 16 == 100 + crypto.envelope_overhead(k)
    assert crypto.open_sealed(kp.private, wire) == b"x" * 100


@settings(max_examples=30)
@given(st.binary(min_size=1, max_size=600))
def test_envelope_roundtrip(data):
    kp = keypair_for("UP")
    assert crypto.open_sealed(kp.private, crypto.seal(kp.public, data, random.Random(len(data)))) == data


def test_envelope_wrong_key_and_short_input():
    a, b = keypair_for("UP"), keypair_for("AGG")
    wire = crypto.seal(a.public, b"secret", random.Random(0))
    with pytest.raises(DecryptionError):
        crypto.open_sealed(b.private, wire)
    with pytest.raises(DecryptionError):
        crypto.open_sealed(a.private, wire[:40])
    with pytest.raises(InvalidParameterError):
        crypto.seal(a.public, b"", random.Random(0))


def _flip(data: bytes, bit: int) -> bytes:
    buf = bytearray(data)
    buf[bit >> 3] ^= 1 << (bit & 7)
    return bytes(buf)


def count_false_accepts(kp, trials: int, rng) -> int:
    """Single-bit corruption trials rotating over envelopes, signatures and
    MACs; returns how many corrupted inputs were accepted."""
    k = kp.public.byte_len
    key = crypto.new_shared_key(rng)
    false_accepts = 0
    for t in range(trials):
        msg = crypto.random_bytes(rng, rng.randrange(1, 120))
        kind = t % 3
        if kind == 0:
            wire = crypto.seal(kp.public, msg, rng)
            bad = _flip(wire, rng.randrange(len(wire) * 8))
            try:
                crypto.open_sealed(kp.private, bad)
                false_accepts += 1
            except DecryptionError:
                pass
        elif kind == 1:
            sig = crypto.sign(kp.private, msg)
            if rng.random() < 0.5:
                raw = _flip(sig.value.to_bytes(k, "big"), rng.randrange(k * 8))
                ok = crypto.verify(kp.public, msg, crypto.Signature(int.from_bytes(raw, "big")))
            else:
                ok = crypto.verify(kp.public, _flip(msg, rng.randrange(len(msg) * 8)), sig)
            false_accepts += ok
        else:
            tag = crypto.mac(key, msg)
            if rng.random() < 0.5:
                ok = crypto.tags_equal(crypto.mac(key, msg), _flip(tag, rng.randrange(256)))
            else:
                ok = crypto.tags_equal(crypto.mac(key, _flip(msg, rng.randrange(len(msg) * 8))), tag)
            false_accepts += ok
    return false_accepts


def test_single_bit_corruption_never_accepted():
    assert count_false_accepts(keypair_for("UP"), 10_000, random.Random("corruption")) == 0


@pytest.mark.parametrize("n", range(1, 9))
def test_chain_matches_iterated_hash(n):
    seed = bytes(range(32))
    chain = crypto.build_chain(seed, n)
    expected = [seed]
    for _ in range(n - 1):
        expected.append(hashlib.sha256(expected[-1]).digest())
    assert list(chain.links) == expected
    assert chain.last == expected[-1] and chain.n == n


def test_chain_argument_checks():
    with pytest.raises(InvalidParameterError):
        crypto.build_chain(bytes(32), 0)
    with pytest.raises(InvalidParameterError):
        crypto.build_chain(bytes(16), 3)


def test_random_bytes_reproducible():
    assert crypto.random_bytes(random.Random(5), 16) == crypto.random_bytes(random.Random(5), 16)
    assert len(crypto.new_shared_key(random.Random(1))) == 32
