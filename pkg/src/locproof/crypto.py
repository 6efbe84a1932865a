"""Hashing, deterministic ECDSA keys, and the shared public-key directory.

One fixed 32-byte hash (SHA-256) is used everywhere a digest is needed:
chaining ledger entries, fingerprinting endorsement requests, deriving
key scalars.  Signatures are deterministic (RFC 6979) ECDSA over the four
NIST curves matching the supported key sizes, so a seeded scenario run is
byte-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature as _BadSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

DIGEST_SIZE = 32

#: Supported signature key sizes (bits) and the curve backing each.
KEY_SIZES = (224, 256, 384, 521)

_CURVES = {
    224: ec.SECP224R1(),
    256: ec.SECP256R1(),
    384: ec.SECP384R1(),
    521: ec.SECP521R1(),
}

# Group orders of the NIST curves above (public constants), needed to map a
# seed-derived integer onto a valid private scalar.
_ORDERS = {
    224: 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFF16A2E0B8F03E13DD29455C5C2A3D,
    256: 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
    384: 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFC7634D81F4372DDF581A0DB248B0A77AECEC196ACCC52973,
    521: 0x1FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFA51868783BF2F966B7FCC0148F709A5D03BB5C9B8899C47AEBB6FB71E91386409,
}

_ECDSA_SIGN = {lvl: ec.ECDSA(hashes.SHA256(), deterministic_signing=True) for lvl in KEY_SIZES}
_ECDSA_VERIFY = ec.ECDSA(hashes.SHA256())

#: Byte width of one signature scalar per key size; signatures are encoded
#: as fixed-width r||s so a message's size depends only on its structure
#: and key size, never on which scalars a particular signature drew.
_SCALAR_BYTES = {224: 28, 256: 32, 384: 48, 521: 66}

#: Total signature length per key size (two scalars).
SIGNATURE_BYTES = {lvl: 2 * w for lvl, w in _SCALAR_BYTES.items()}


class UnsupportedKeySize(ValueError):
    pass


def digest(data: bytes) -> bytes:
    """SHA-256 of ``data``; the one hash used across the whole system."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    """A deterministic signing keypair at one of the supported key sizes."""

    level: int
    secret: ec.EllipticCurvePrivateKey = field(repr=False, compare=False)
    public: ec.EllipticCurvePublicKey = field(repr=False, compare=False)
    public_der: bytes = field(repr=False)

    @property
    def fingerprint(self) -> str:
        """Hex crypto-id pseudonym derived from the public key."""
        return digest(self.public_der).hex()


def _scalar_from_seed(seed: int, level: int) -> int:
    order = _ORDERS[level]
    material = b""
    counter = 0
    while len(material) < (order.bit_length() // 8) + 16:
        material += digest(
            b"key-scalar"
            + seed.to_bytes(16, "big", signed=True)
            + level.to_bytes(2, "big")
            + counter.to_bytes(4, "big")
        )
        counter += 1
    return int.from_bytes(material, "big") % (order - 1) + 1


@lru_cache(maxsize=65536)
def generate_keypair(seed: int, level: int = 224) -> KeyPair:
    """Derive a keypair from ``seed``; same (seed, level) always yields the same keys."""
    if level not in _CURVES:
        raise UnsupportedKeySize(f"key size {level} not in {KEY_SIZES}")
    secret = ec.derive_private_key(_scalar_from_seed(seed, level), _CURVES[level])
    public = secret.public_key()
    der = public.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )
    return KeyPair(level=level, secret=secret, public=public, public_der=der)


def sign(keypair: KeyPair, payload: bytes) -> bytes:
    """Deterministic ECDSA over ``payload`` (pre-hashed once), fixed width."""
    der = keypair.secret.sign(digest(payload), _ECDSA_SIGN[keypair.level])
    r, s = decode_dss_signature(der)
    width = _SCALAR_BYTES[keypair.level]
    return r.to_bytes(width, "big") + s.to_bytes(width, "big")


@lru_cache(maxsize=1 << 17)
def _verify_cached(public_der: bytes, payload_digest: bytes, sig: bytes) -> bool:
    if len(sig) % 2 != 0 or not sig:
        return False
    half = len(sig) // 2
    der = encode_dss_signature(
        int.from_bytes(sig[:half], "big"), int.from_bytes(sig[half:], "big")
    )
    public = serialization.load_der_public_key(public_der)
    try:
        public.verify(der, payload_digest, _ECDSA_VERIFY)
        return True
    except _BadSignature:
        return False


def verify(public_der: bytes, payload: bytes, sig: bytes) -> bool:
    """Check ``sig`` over ``payload``; malformed signature bytes return False.

    Verification is memoized: replicated validation of the same signed
    message across many nodes costs one ECDSA operation.  The payload is
    collapsed to its digest first (signing applies the same pre-hash), which
    keeps the cache key small.
    """
    if not isinstance(sig, bytes) or not sig:
        return False
    try:
        return _verify_cached(public_der, digest(payload), sig)
    except Exception:
        return False


class KeyDirectory:
    """Registered public keys for every known entity, plus the supervisor set.

    Stands in for the out-of-scope PKI: every participant's crypto-id maps
    to exactly one public key, and private keys are never shared.
    """

    def __init__(self) -> None:
        self._keys: dict[str, bytes] = {}
        self._supervisors: set[str] = set()

    def register(self, entity: str, public_der: bytes, supervisor: bool = False) -> None:
        if entity in self._keys and self._keys[entity] != public_der:
            raise ValueError(f"entity {entity!r} already registered with a different key")
        self._keys[entity] = public_der
        if supervisor:
            self._supervisors.add(entity)

    def knows(self, entity: str) -> bool:
        return entity in self._keys

    def public_der(self, entity: str) -> bytes:
        return self._keys[entity]

    def is_supervisor(self, entity: str) -> bool:
        return entity in self._supervisors

    @property
    def supervisors(self) -> frozenset[str]:
        return frozenset(self._supervisors)

    def check(self, entity: str, payload: bytes, sig: bytes) -> bool:
        """True iff ``entity`` is known and ``sig`` verifies over ``payload``."""
        der = self._keys.get(entity)
        if der is None:
            return False
        return verify(der, payload, sig)
