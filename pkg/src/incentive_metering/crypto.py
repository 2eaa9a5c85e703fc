"""RSA keys, Chaum blind signatures, RSA-FDH signing, hybrid envelopes, MACs
and hash chains.

All randomness comes from an injected ``random.Random``-compatible generator so
that simulations replay bit-exactly. Pass ``secrets.SystemRandom()`` for
anything outside a simulation. The 128- and 256-bit moduli exist only to
reproduce a benchmark axis and are trivially factorable.
"""

from __future__ import annotations

import hashlib
import hmac
import math
import random
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import ConfigError, DecryptionError, InvalidParameterError

SUPPORTED_BITS = (128, 256, 512, 1024, 2048)
PUBLIC_EXPONENT = 65537
HASH_LEN = 32
MAC_LEN = 32
SHARED_KEY_LEN = 32
GCM_TAG_LEN = 16
_GCM_NONCE = bytes(12)  # every envelope key is fresh, so a fixed nonce is safe
_MR_ROUNDS = 24
_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % q for q in range(2, math.isqrt(p) + 1))]


def H(data: bytes) -> bytes:
    """The protocol hash: SHA-256."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class PublicKey:
    e: int
    n: int
    key_id: str = ""

    @property
    def byte_len(self) -> int:
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True, repr=False)
class PrivateKey:
    d: int
    n: int
    p: int
    q: int
    key_id: str = ""
    _dp: int = field(init=False)
    _dq: int = field(init=False)
    _qinv: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_dp", self.d % (self.p - 1))
        object.__setattr__(self, "_dq", self.d % (self.q - 1))
        object.__setattr__(self, "_qinv", pow(self.q, -1, self.p))

    def __repr__(self):
        return f"PrivateKey(key_id={self.key_id!r}, bits={self.n.bit_length()})"

    @property
    def byte_len(self) -> int:
        return (self.n.bit_length() + 7) // 8

    def power(self, x: int) -> int:
        """``x**d mod n`` through the CRT; equal to ``pow(x, d, n)``."""
        m1 = pow(x, self._dp, self.p)
        m2 = pow(x, self._dq, self.q)
        h = (self._qinv * (m1 - m2)) % self.p
        return m2 + h * self.q


@dataclass(frozen=True)
class KeyPair:
    modulus_bits: int
    public: PublicKey
    private: PrivateKey

    @property
    def key_id(self) -> str:
        return self.public.key_id


def _is_probable_prime(candidate: int, rng: random.Random) -> bool:
    if candidate < 2:
        return False
    for p in _SMALL_PRIMES:
        if candidate % p == 0:
            return candidate == p
    d, s = candidate - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(_MR_ROUNDS):
        x = pow(rng.randrange(2, candidate - 1), d, candidate)
        if x in (1, candidate - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, candidate)
            if x == candidate - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so that the product of two such primes has 2*bits bits
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if _is_probable_prime(candidate, rng) and math.gcd(PUBLIC_EXPONENT, candidate - 1) == 1:
            return candidate


def keygen(bits: int, rng: random.Random, key_id: str = "") -> KeyPair:
    if bits not in SUPPORTED_BITS:
        raise ConfigError(f"unsupported RSA modulus size {bits}; choose from {SUPPORTED_BITS}")
    half = bits // 2
    p = _random_prime(half, rng)
    q = _random_prime(half, rng)
    while q == p:
        q = _random_prime(half, rng)
    n = p * q
    phi = (p - 1) * (q - 1)
    d = pow(PUBLIC_EXPONENT, -1, phi)
    return KeyPair(bits, PublicKey(PUBLIC_EXPONENT, n, key_id), PrivateKey(d, n, p, q, key_id))


def fdh(message: bytes, n: int) -> int:
    """Full-domain hash of ``message`` into Z_n.

    SHA-256 in counter mode is expanded to 16 bytes beyond the modulus length
    before reduction, which keeps the reduction bias below 2**-128.
    """
    width = (n.bit_length() + 7) // 8 + 16
    out = bytearray()
    counter = 0
    while len(out) < width:
        out += hashlib.sha256(b"FDH" + counter.to_bytes(4, "big") + message).digest()
        counter += 1
    return int.from_bytes(out[:width], "big") % n


@dataclass(frozen=True)
class Signature:
    value: int
    signer_key_id: str = ""


@dataclass(frozen=True, repr=False)
class BlindingFactor:
    r: int
    r_inv: int
    r_e: int
    n: int

    def __repr__(self):
        return "BlindingFactor(<redacted>)"


def blind(message: bytes, pk: PublicKey, rng: random.Random) -> tuple[int, BlindingFactor]:
    """Blind ``FDH(message)`` as ``FDH(message) * r**e mod n``."""
    while True:
        r = rng.randrange(2, pk.n)
        if math.gcd(r, pk.n) == 1:
            break
    r_e = pow(r, pk.e, pk.n)
    blinded = fdh(message, pk.n) * r_e % pk.n
    return blinded, BlindingFactor(r, pow(r, -1, pk.n), r_e, pk.n)


def sign_blinded(blinded: int, sk: PrivateKey) -> Signature:
    if not 0 <= blinded < sk.n:
        raise InvalidParameterError("blinded value must lie in [0, n)")
    return Signature(sk.power(blinded), sk.key_id)


def unblind(blind_sig: Signature, bf: BlindingFactor) -> Signature:
    return Signature(blind_sig.value * bf.r_inv % bf.n, blind_sig.signer_key_id)


def sign(sk: PrivateKey, message: bytes) -> Signature:
    return Signature(sk.power(fdh(message, sk.n)), sk.key_id)


def verify(pk: PublicKey, message: bytes, sig: Signature) -> bool:
    if not 0 <= sig.value < pk.n:
        return False
    return pow(sig.value, pk.e, pk.n) == fdh(message, pk.n)


def mac(key: bytes, message: bytes) -> bytes:
    """HMAC-SHA256 tag (32 bytes)."""
    if len(key) != SHARED_KEY_LEN:
        raise InvalidParameterError(f"MAC key must be {SHARED_KEY_LEN} bytes")
    return hmac.new(key, message, hashlib.sha256).digest()


def tags_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def random_bytes(rng: random.Random, length: int) -> bytes:
    return rng.getrandbits(8 * length).to_bytes(length, "big")


def new_shared_key(rng: random.Random) -> bytes:
    return random_bytes(rng, SHARED_KEY_LEN)


@dataclass(frozen=True)
class Envelope:
    """RSA-KEM wrapped key plus AES-256-GCM body.

    Wire form: the wrapped key as a fixed-width big-endian integer of the
    recipient modulus length, followed by ciphertext and 16-byte GCM tag.
    """

    wrapped_key: int
    body: bytes

    def to_bytes(self, modulus_len: int) -> bytes:
        return self.wrapped_key.to_bytes(modulus_len, "big") + self.body

    @classmethod
    def from_bytes(cls, data: bytes, modulus_len: int) -> "Envelope":
        if len(data) < modulus_len + GCM_TAG_LEN:
            raise DecryptionError("envelope shorter than its fixed overhead")
        return cls(int.from_bytes(data[:modulus_len], "big"), bytes(data[modulus_len:]))

    def wire_size(self, modulus_len: int) -> int:
        return modulus_len + len(self.body)


def envelope_overhead(modulus_len: int) -> int:
    return modulus_len + GCM_TAG_LEN


def _kem_key(secret: int, modulus_len: int) -> bytes:
    return hashlib.sha256(b"KEM" + secret.to_bytes(modulus_len, "big")).digest()


def envelope_encrypt(pk: PublicKey, plaintext: bytes, rng: random.Random) -> Envelope:
    if not plaintext:
        raise InvalidParameterError("plaintext must be non-empty")
    secret = rng.randrange(2, pk.n)
    key = _kem_key(secret, pk.byte_len)
    body = AESGCM(key).encrypt(_GCM_NONCE, plaintext, None)
    return Envelope(pow(secret, pk.e, pk.n), body)


def envelope_decrypt(sk: PrivateKey, envelope: Envelope) -> bytes:
    if not 0 <= envelope.wrapped_key < sk.n:
        raise DecryptionError("wrapped key out of range")
    key = _kem_key(sk.power(envelope.wrapped_key), sk.byte_len)
    try:
        return AESGCM(key).decrypt(_GCM_NONCE, envelope.body, None)
    except InvalidTag:
        raise DecryptionError("envelope authentication failed") from None


def seal(pk: PublicKey, plaintext: bytes, rng: random.Random) -> bytes:
    """Encrypt and serialise in one step."""
    return envelope_encrypt(pk, plaintext, rng).to_bytes(pk.byte_len)


def open_sealed(sk: PrivateKey, wire: bytes) -> bytes:
    return envelope_decrypt(sk, Envelope.from_bytes(wire, sk.byte_len))


@dataclass(frozen=True)
class CredentialChain:
    seed: bytes
    links: tuple[bytes, ...]

    @property
    def n(self) -> int:
        return len(self.links)

    @property
    def last(self) -> bytes:
        return self.links[-1]


def build_chain(seed: bytes, n: int) -> CredentialChain:
    """``links[0] = seed`` and ``links[i] = H(links[i-1])``."""
    if n < 1:
        raise InvalidParameterError("a credential chain needs at least one link")
    if len(seed) != HASH_LEN:
        raise InvalidParameterError(f"chain seed must be {HASH_LEN} bytes")
    links = [seed]
    for _ in range(n - 1):
        links.append(H(links[-1]))
    return CredentialChain(seed, tuple(links))
