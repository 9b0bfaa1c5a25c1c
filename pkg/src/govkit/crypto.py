"""Cryptographic primitives behind a pluggable backend seam.

One basic backend ships: SHA-256 digests and Ed25519 signatures (via the
`cryptography` package, so signing is RFC 8032 deterministic from a
32-byte seed). Enhanced schemes are declared slots on the registry that
raise UnsupportedBackend if selected; the rest of the package only ever
talks to the interface, so swapping schemes never touches governance
logic.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 32
SECRET_KEY_SIZE = 32
SIGNATURE_SIZE = 64

ZERO_DIGEST_BYTES = b"\x00" * DIGEST_SIZE


class CryptoError(Exception):
    """Base class for failures in this module."""


class UnsupportedBackend(CryptoError):
    """A declared-but-not-shipped backend was selected."""


class Digest(bytes):
    """A 32-byte hash value. Subclasses bytes so it hashes and compares
    by value and feeds straight into the CBOR encoder."""

    def __new__(cls, value: bytes) -> "Digest":
        raw = bytes(value)
        if len(raw) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        return cls(bytes.fromhex(text))


ZERO_DIGEST = Digest(ZERO_DIGEST_BYTES)


class Signature(bytes):
    """A 64-byte signature value."""

    def __new__(cls, value: bytes) -> "Signature":
        raw = bytes(value)
        if len(raw) != SIGNATURE_SIZE:
            raise ValueError(
                f"signature must be {SIGNATURE_SIZE} bytes, got {len(raw)}"
            )
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "Signature":
        return cls(bytes.fromhex(text))


@dataclass(frozen=True)
class KeyPair:
    """Raw Ed25519 key material: 32-byte verification key, 32-byte seed."""

    public_key: bytes
    secret_key: bytes


def digest(data: bytes) -> Digest:
    """SHA-256 of `data`."""
    return Digest(hashlib.sha256(bytes(data)).digest())


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Derive a keypair from a 32-byte seed; fresh OS entropy when omitted.

    Deterministic from the seed, which is what test fixtures rely on.
    """
    if seed is None:
        seed = os.urandom(SECRET_KEY_SIZE)
    seed = bytes(seed)
    if len(seed) != SECRET_KEY_SIZE:
        raise ValueError(f"seed must be {SECRET_KEY_SIZE} bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(public_key=public, secret_key=seed)


def sign(secret_key: bytes, message: bytes) -> Signature:
    """Ed25519 signature over `message` under the 32-byte seed key."""
    seed = bytes(secret_key)
    if len(seed) != SECRET_KEY_SIZE:
        raise CryptoError(f"secret key must be {SECRET_KEY_SIZE} bytes")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    return Signature(private.sign(bytes(message)))


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff `signature` is valid for (public_key, message).

    Total function: malformed keys or signatures return False, never raise.
    """
    try:
        key = Ed25519PublicKey.from_public_bytes(bytes(public_key))
        key.verify(bytes(signature), bytes(message))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


# ---------------------------------------------------------------------------
# Backend registry
# ---------------------------------------------------------------------------


class CryptoBackend:
    """Interface every signing/hashing backend provides."""

    name = "abstract"

    def digest(self, data: bytes) -> Digest:
        raise NotImplementedError

    def generate_keypair(self, seed: Optional[bytes] = None) -> KeyPair:
        raise NotImplementedError

    def sign(self, secret_key: bytes, message: bytes) -> Signature:
        raise NotImplementedError

    def verify_signature(
        self, public_key: bytes, message: bytes, signature: bytes
    ) -> bool:
        raise NotImplementedError


class BasicBackend(CryptoBackend):
    """SHA-256 + Ed25519, the one backend that ships."""

    name = "basic"

    def digest(self, data: bytes) -> Digest:
        return digest(data)

    def generate_keypair(self, seed: Optional[bytes] = None) -> KeyPair:
        return generate_keypair(seed)

    def sign(self, secret_key: bytes, message: bytes) -> Signature:
        return sign(secret_key, message)

    def verify_signature(
        self, public_key: bytes, message: bytes, signature: bytes
    ) -> bool:
        return verify_signature(public_key, message, signature)


# Declared slots for enhanced schemes: selectable names, no implementation.
_DECLARED_ONLY = {
    "bbs-plus": "selective-disclosure signatures",
    "dv-snark": "succinct replay-verification proofs",
}

_BACKENDS = {"basic": BasicBackend()}


def get_backend(name: str = "basic") -> CryptoBackend:
    """Look up a backend by name.

    Declared-but-unshipped backends raise UnsupportedBackend; unknown
    names raise CryptoError.
    """
    if name in _BACKENDS:
        return _BACKENDS[name]
    if name in _DECLARED_ONLY:
        raise UnsupportedBackend(
            f"backend {name!r} ({_DECLARED_ONLY[name]}) is declared but not shipped"
        )
    raise CryptoError(f"unknown backend {name!r}")
