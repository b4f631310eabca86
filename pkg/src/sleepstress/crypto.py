"""Keypairs, detached signatures and public-key sealed envelopes.

The gateway and contracts only see this interface; the default scheme is
Ed25519 signatures with X25519 + AES-256-GCM hybrid sealing (a fresh
symmetric session key wrapped for the recipient's public key), which
keeps payloads of any size confidential and tamper-evident at the
128-bit security level. A seeded keygen mode exists solely for tests;
without a seed, key material comes from OS entropy.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import hashes, serialization

from .encoding import ByteReader, pack_bytes, pack_u8

ALGORITHM = "ed25519+x25519+aes256gcm"
KEY_VERSION = 1
ENVELOPE_VERSION = 1

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NOENC = serialization.NoEncryption()


class KeyMaterialError(ValueError):
    """Malformed or mismatched key bytes."""


class DecryptionError(ValueError):
    """Envelope could not be opened; the cause is deliberately opaque."""


def key_id(public_bytes: bytes) -> bytes:
    """SHA-256 of the public key container; stable node identity."""
    return hashlib.sha256(public_bytes).digest()


@dataclass(frozen=True)
class KeyPair:
    public_bytes: bytes  # version | ed25519 pub (32) | x25519 pub (32)
    private_bytes: bytes  # version | ed25519 seed (32) | x25519 priv (32)

    @property
    def key_id(self) -> bytes:
        return key_id(self.public_bytes)


def keygen(seed: int | bytes | None = None) -> KeyPair:
    """New signing + sealing keypair; deterministic when seeded."""
    if seed is None:
        ed_seed = os.urandom(32)
        x_seed = os.urandom(32)
    else:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        ed_seed = hashlib.sha256(b"sign-key" + seed).digest()
        x_seed = hashlib.sha256(b"seal-key" + seed).digest()
    ed_priv = Ed25519PrivateKey.from_private_bytes(ed_seed)
    x_priv = X25519PrivateKey.from_private_bytes(x_seed)
    public = (
        bytes([KEY_VERSION])
        + ed_priv.public_key().public_bytes(_RAW, _RAW_PUB)
        + x_priv.public_key().public_bytes(_RAW, _RAW_PUB)
    )
    private = bytes([KEY_VERSION]) + ed_seed + x_seed
    return KeyPair(public_bytes=public, private_bytes=private)


def _split_public(public_bytes: bytes) -> tuple[bytes, bytes]:
    if len(public_bytes) != 65 or public_bytes[0] != KEY_VERSION:
        raise KeyMaterialError("bad public key container")
    return public_bytes[1:33], public_bytes[33:65]


def _split_private(private_bytes: bytes) -> tuple[bytes, bytes]:
    if len(private_bytes) != 65 or private_bytes[0] != KEY_VERSION:
        raise KeyMaterialError("bad private key container")
    return private_bytes[1:33], private_bytes[33:65]


def sign(private_bytes: bytes, message: bytes) -> bytes:
    """Detached Ed25519 signature over the message bytes."""
    ed_seed, _ = _split_private(private_bytes)
    return Ed25519PrivateKey.from_private_bytes(ed_seed).sign(message)


def verify(public_bytes: bytes, message: bytes, signature: bytes) -> bool:
    """True iff the signature matches the message under this public key."""
    ed_pub, _ = _split_public(public_bytes)
    try:
        Ed25519PublicKey.from_public_bytes(ed_pub).verify(signature, message)
        return True
    except InvalidSignature:
        return False
    except ValueError:
        return False


@dataclass(frozen=True)
class SealedEnvelope:
    """Hybrid envelope: session key wrapped for the recipient.

    ``wrapped_key`` carries the ephemeral X25519 public key, the wrap
    nonce and the AES-GCM-wrapped session key; the payload ciphertext and
    its 16-byte integrity tag travel separately. Wire layout is the
    length-prefixed canonical field order (version, wrapped key, nonce,
    ciphertext, tag).
    """

    version: int
    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return (
            pack_u8(self.version)
            + pack_bytes(self.wrapped_key)
            + pack_bytes(self.nonce)
            + pack_bytes(self.ciphertext)
            + pack_bytes(self.tag)
        )

    @staticmethod
    def from_bytes(data: bytes) -> "SealedEnvelope":
        reader = ByteReader(data)
        env = SealedEnvelope(
            version=reader.u8(),
            wrapped_key=reader.bytes_field(),
            nonce=reader.bytes_field(),
            ciphertext=reader.bytes_field(),
            tag=reader.bytes_field(),
        )
        reader.expect_end()
        return env


def _kek(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"envelope-v1" + eph_pub + recipient_pub,
    ).derive(shared)


def seal(public_bytes: bytes, plaintext: bytes) -> SealedEnvelope:
    """Encrypt to the holder of the matching private key.

    Probabilistic: a fresh ephemeral key, session key and nonces per
    call, so equal plaintexts never produce equal ciphertexts.
    """
    _, x_pub_raw = _split_public(public_bytes)
    recipient = X25519PublicKey.from_public_bytes(x_pub_raw)
    ephemeral = X25519PrivateKey.generate()
    eph_pub = ephemeral.public_key().public_bytes(_RAW, _RAW_PUB)
    kek = _kek(ephemeral.exchange(recipient), eph_pub, x_pub_raw)

    session_key = os.urandom(32)
    wrap_nonce = os.urandom(12)
    wrapped = AESGCM(kek).encrypt(wrap_nonce, session_key, b"wrap-v1")

    nonce = os.urandom(12)
    sealed = AESGCM(session_key).encrypt(nonce, plaintext, b"payload-v1")
    return SealedEnvelope(
        version=ENVELOPE_VERSION,
        wrapped_key=eph_pub + wrap_nonce + wrapped,
        nonce=nonce,
        ciphertext=sealed[:-16],
        tag=sealed[-16:],
    )


def open_envelope(private_bytes: bytes, envelope: SealedEnvelope) -> bytes:
    """Recover the plaintext; any mismatch or tamper raises DecryptionError."""
    _, x_seed = _split_private(private_bytes)
    try:
        if envelope.version != ENVELOPE_VERSION:
            raise ValueError("version")
        if len(envelope.wrapped_key) != 32 + 12 + 48:
            raise ValueError("wrapped key length")
        eph_pub = envelope.wrapped_key[:32]
        wrap_nonce = envelope.wrapped_key[32:44]
        wrapped = envelope.wrapped_key[44:]
        priv = X25519PrivateKey.from_private_bytes(x_seed)
        my_pub = priv.public_key().public_bytes(_RAW, _RAW_PUB)
        kek = _kek(
            priv.exchange(X25519PublicKey.from_public_bytes(eph_pub)), eph_pub, my_pub
        )
        session_key = AESGCM(kek).decrypt(wrap_nonce, wrapped, b"wrap-v1")
        return AESGCM(session_key).decrypt(
            envelope.nonce, envelope.ciphertext + envelope.tag, b"payload-v1"
        )
    except (InvalidTag, ValueError):
        raise DecryptionError("envelope could not be opened") from None


def save_keypair(pair: KeyPair, path: str) -> None:
    """Versioned key file with an algorithm tag and both key parts."""
    payload = {
        "version": KEY_VERSION,
        "algorithm": ALGORITHM,
        "public": pair.public_bytes.hex(),
        "private": pair.private_bytes.hex(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def load_keypair(path: str) -> KeyPair:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("algorithm") != ALGORITHM or payload.get("version") != KEY_VERSION:
        raise KeyMaterialError("unsupported key file")
    return KeyPair(
        public_bytes=bytes.fromhex(payload["public"]),
        private_bytes=bytes.fromhex(payload["private"]),
    )
