"""Cryptographic building blocks used by every SALVE party.

SHA-256 hashing, RSA-2048 signatures (PKCS#1 v1.5), X25519 ephemeral key
shares, master-secret derivation bound to the handshake transcript, and the
AEAD record protection used for post-handshake traffic.

Randomness can be drawn from a seeded :class:`random.Random` everywhere, so
tests and simulations are reproducible.
"""

from __future__ import annotations

import functools
import hashlib
import hmac
import math
import os
import random
import struct
from dataclasses import dataclass, field
from typing import Optional

import gmpy2
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa, x25519
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import HandshakeError, KeyFormatError

DIGEST_SIZE = 32
MASTER_SECRET_SIZE = 48
RSA_BITS = 2048
RSA_EXPONENT = 65537
SIGNATURE_ALGORITHM = "rsa2048-sha256"

# TLS NamedGroup codepoint for x25519
GROUP_X25519 = 29

_MASTER_LABEL = b"salve extended master secret"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def random_bytes(n: int, rng: Optional[random.Random] = None) -> bytes:
    """``n`` random bytes from ``rng``, or from the OS when no generator is given."""
    if rng is None:
        return os.urandom(n)
    return rng.getrandbits(8 * n).to_bytes(n, "big")


# -- RSA signing identities ------------------------------------------------------


def _random_prime(rng: random.Random, bits: int) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        p = int(gmpy2.next_prime(candidate))
        if p.bit_length() == bits:
            return p


@functools.lru_cache(maxsize=None)
def _seeded_rsa_key(seed: int, bits: int) -> rsa.RSAPrivateKey:
    rng = random.Random(f"salve-rsa-{seed}")
    e = RSA_EXPONENT
    while True:
        p = _random_prime(rng, bits // 2)
        q = _random_prime(rng, bits // 2)
        if p == q or math.gcd(e, (p - 1) * (q - 1)) != 1:
            continue
        d = pow(e, -1, (p - 1) * (q - 1))
        numbers = rsa.RSAPrivateNumbers(
            p=p,
            q=q,
            d=d,
            dmp1=rsa.rsa_crt_dmp1(d, p),
            dmq1=rsa.rsa_crt_dmq1(d, q),
            iqmp=rsa.rsa_crt_iqmp(p, q),
            public_numbers=rsa.RSAPublicNumbers(e, p * q),
        )
        return numbers.private_key()


@functools.lru_cache(maxsize=256)
def load_public_key(der: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_der_public_key(der)
    except (ValueError, TypeError) as exc:
        raise KeyFormatError("malformed DER public key") from exc
    if not isinstance(key, rsa.RSAPublicKey):
        raise KeyFormatError("expected an RSA public key")
    return key


@dataclass(frozen=True)
class SigningIdentity:
    """An RSA-2048/SHA-256 key pair; verifier-side copies carry no private key."""

    public: bytes
    private_key: Optional[rsa.RSAPrivateKey] = field(default=None, repr=False, compare=False)
    algorithm: str = SIGNATURE_ALGORITHM

    @classmethod
    def generate(cls, seed: Optional[int] = None) -> "SigningIdentity":
        """Create a new key pair, deterministically when ``seed`` is given."""
        if seed is None:
            key = rsa.generate_private_key(public_exponent=RSA_EXPONENT, key_size=RSA_BITS)
        else:
            key = _seeded_rsa_key(seed, RSA_BITS)
        return cls.from_private_key(key)

    @classmethod
    def from_private_key(cls, key: rsa.RSAPrivateKey) -> "SigningIdentity":
        der = key.public_key().public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        return cls(public=der, private_key=key)

    @classmethod
    def from_private_bytes(cls, der: bytes) -> "SigningIdentity":
        try:
            key = serialization.load_der_private_key(der, password=None)
        except (ValueError, TypeError) as exc:
            raise KeyFormatError("malformed DER private key") from exc
        if not isinstance(key, rsa.RSAPrivateKey):
            raise KeyFormatError("expected an RSA private key")
        return cls.from_private_key(key)

    @property
    def has_private(self) -> bool:
        return self.private_key is not None

    @property
    def private(self) -> Optional[bytes]:
        if self.private_key is None:
            return None
        return self.private_key.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def public_only(self) -> "SigningIdentity":
        return SigningIdentity(public=self.public, algorithm=self.algorithm)

    def sign(self, msg: bytes) -> bytes:
        return sign(self, msg)

    def decrypt(self, ciphertext: bytes) -> bytes:
        """RSA-OAEP decryption, used only by the static-RSA key exchange."""
        if self.private_key is None:
            raise KeyFormatError("identity has no private key")
        try:
            return self.private_key.decrypt(ciphertext, _oaep())
        except ValueError as exc:
            raise HandshakeError("RSA decryption failed") from exc


def sign(identity: SigningIdentity, msg: bytes) -> bytes:
    if identity.private_key is None:
        raise KeyFormatError("cannot sign without a private key")
    return identity.private_key.sign(msg, padding.PKCS1v15(), hashes.SHA256())


def verify(public: bytes, msg: bytes, signature: bytes) -> bool:
    """Check a raw big-endian RSA signature; raises KeyFormatError for bad keys."""
    key = load_public_key(public)
    if len(signature) != key.key_size // 8:
        return False
    try:
        key.verify(signature, msg, padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        return False
    return True


def _oaep() -> padding.OAEP:
    return padding.OAEP(mgf=padding.MGF1(hashes.SHA256()), algorithm=hashes.SHA256(), label=None)


def rsa_encrypt(public: bytes, plaintext: bytes) -> bytes:
    return load_public_key(public).encrypt(plaintext, _oaep())


# -- ephemeral Diffie-Hellman ------------------------------------------------------


@dataclass(frozen=True)
class EphemeralKeyShare:
    group: int
    public: bytes
    private: Optional[bytes] = field(default=None, repr=False)


def dh_generate(rng: Optional[random.Random] = None) -> EphemeralKeyShare:
    scalar = random_bytes(32, rng)
    key = x25519.X25519PrivateKey.from_private_bytes(scalar)
    public = key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return EphemeralKeyShare(group=GROUP_X25519, public=public, private=scalar)


def dh_combine(local: EphemeralKeyShare, peer_public: bytes, group: int = GROUP_X25519) -> bytes:
    if local.private is None:
        raise HandshakeError("local key share has no private scalar")
    if group != local.group:
        raise HandshakeError(f"group mismatch: {group} != {local.group}")
    try:
        peer = x25519.X25519PublicKey.from_public_bytes(peer_public)
        # raises ValueError when the result is the all-zero point
        return x25519.X25519PrivateKey.from_private_bytes(local.private).exchange(peer)
    except ValueError as exc:
        raise HandshakeError("invalid peer key share") from exc


# -- secrets ---------------------------------------------------------------------------


def derive_master_secret(shared: bytes, transcript_hash: bytes) -> bytes:
    """HKDF-SHA256 over the shared secret, bound to the hello/key-exchange transcript."""
    return HKDF(
        algorithm=hashes.SHA256(),
        length=MASTER_SECRET_SIZE,
        salt=None,
        info=_MASTER_LABEL + transcript_hash,
    ).derive(shared)


def session_digest(master: bytes) -> bytes:
    """h(k): the only form in which the master secret leaves the endpoints."""
    return sha256(master)


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


# -- record protection -------------------------------------------------------------


def aead_seal(key: bytes, seq: int, plaintext: bytes, aad: bytes = b"") -> bytes:
    return AESGCM(key).encrypt(struct.pack("!4xQ", seq), plaintext, aad)


def aead_open(key: bytes, seq: int, ciphertext: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(key).decrypt(struct.pack("!4xQ", seq), ciphertext, aad)
    except InvalidTag as exc:
        raise HandshakeError("record authentication failed") from exc
