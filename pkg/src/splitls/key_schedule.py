"""TLS 1.3 key schedule: HKDF primitives and the handshake secret chain.

HKDF is written against ``hmac``/``hashlib`` so the schedule has no hidden
state; the test-suite checks it against an independent HKDF implementation.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional

from .codec import CipherSuite


class LengthOverflow(ValueError):
    pass


class EmptyTranscript(ValueError):
    pass


class OutOfOrder(RuntimeError):
    pass


class PskOnlyUnsupported(ValueError):
    pass


@dataclass(frozen=True)
class SuiteParams:
    suite: CipherSuite
    hash_name: str
    hash_len: int
    key_len: int
    aead: str
    iv_len: int = 12


SUITES: dict[CipherSuite, SuiteParams] = {
    CipherSuite.AES_128_GCM_SHA256: SuiteParams(CipherSuite.AES_128_GCM_SHA256, "sha256", 32, 16, "aesgcm"),
    CipherSuite.AES_256_GCM_SHA384: SuiteParams(CipherSuite.AES_256_GCM_SHA384, "sha384", 48, 32, "aesgcm"),
    CipherSuite.CHACHA20_POLY1305_SHA256: SuiteParams(CipherSuite.CHACHA20_POLY1305_SHA256, "sha256", 32, 32, "chacha20"),
}


def suite_params(suite: int) -> SuiteParams:
    try:
        return SUITES[CipherSuite(suite)]
    except (KeyError, ValueError):
        raise ValueError(f"unsupported cipher suite 0x{suite:04x}") from None


def _hash_len(hash_name: str) -> int:
    return hashlib.new(hash_name).digest_size


def hkdf_extract(salt: bytes, ikm: bytes, hash_name: str = "sha256") -> bytes:
    if not salt:
        salt = bytes(_hash_len(hash_name))
    return hmac.new(salt, ikm, hash_name).digest()


def hkdf_expand(prk: bytes, info: bytes, length: int, hash_name: str = "sha256") -> bytes:
    hlen = _hash_len(hash_name)
    if length > 255 * hlen:
        raise LengthOverflow(f"HKDF-Expand length {length} exceeds {255 * hlen}")
    out = b""
    block = b""
    counter = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hash_name).digest()
        out += block
        counter += 1
    return out[:length]


def hkdf_expand_label(secret: bytes, label: str | bytes, context: bytes, length: int,
                      hash_name: str = "sha256") -> bytes:
    if isinstance(label, str):
        label = label.encode()
    full = b"tls13 " + label
    if len(full) > 255 or len(context) > 255:
        raise ValueError("label or context too long for HkdfLabel")
    if length > 255 * _hash_len(hash_name):
        raise LengthOverflow(f"expand-label length {length} exceeds 255 * hash length")
    info = length.to_bytes(2, "big") + bytes([len(full)]) + full + bytes([len(context)]) + context
    return hkdf_expand(secret, info, length, hash_name)


def transcript_digest(data: bytes, hash_name: str = "sha256") -> bytes:
    return hashlib.new(hash_name, data).digest()


def derive_secret(secret: bytes, label: str, messages: bytes, hash_name: str = "sha256") -> bytes:
    return hkdf_expand_label(secret, label, transcript_digest(messages, hash_name),
                             _hash_len(hash_name), hash_name)


def finished_key(traffic_secret: bytes, hash_name: str = "sha256") -> bytes:
    return hkdf_expand_label(traffic_secret, "finished", b"", _hash_len(hash_name), hash_name)


def finished_mac(traffic_secret: bytes, transcript: bytes, hash_name: str = "sha256") -> bytes:
    """Finished verify_data over the transcript (hashed here)."""
    return hmac.new(finished_key(traffic_secret, hash_name),
                    transcript_digest(transcript, hash_name), hash_name).digest()


def psk_from_resumption(r: bytes, ticket_nonce: bytes, hash_name: str = "sha256") -> bytes:
    return hkdf_expand_label(r, "resumption", ticket_nonce, _hash_len(hash_name), hash_name)


def early_secret(psk: Optional[bytes], hash_name: str = "sha256") -> bytes:
    hlen = _hash_len(hash_name)
    return hkdf_extract(bytes(hlen), bytes(psk) if psk else bytes(hlen), hash_name)


def binder_key_and_mac(psk: bytes, truncated_client_hello: bytes, hash_name: str = "sha256",
                       external: bool = False) -> tuple[bytes, bytes]:
    """Resumption binder key and the binder MAC over a truncated ClientHello."""
    es = early_secret(psk, hash_name)
    bk = derive_secret(es, "ext binder" if external else "res binder", b"", hash_name)
    return bk, finished_mac(bk, truncated_client_hello, hash_name)


@dataclass(frozen=True)
class SharedKeyMaterial:
    ke: Optional[bytes] = None
    psk: Optional[bytes] = None

    def __post_init__(self) -> None:
        if not self.ke and not self.psk:
            raise ValueError("SharedKeyMaterial needs ke, psk or both")


@dataclass
class SecretBundle:
    """Traffic secrets of one session; ``zeroize`` overwrites them in place."""

    h_c: Optional[bytearray] = None
    h_s: Optional[bytearray] = None
    a_c: Optional[bytearray] = None
    a_s: Optional[bytearray] = None
    r: Optional[bytearray] = None

    def zeroize(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                value[:] = bytes(len(value))

    def is_zero(self) -> bool:
        return all(not any(getattr(self, f.name) or b"") for f in fields(self))


class _Stage(Enum):
    FRESH = 0
    HANDSHAKE = 1
    APPLICATION = 2
    RESUMPTION = 3
    DESTROYED = 4


@dataclass
class KeySchedule:
    """One handshake's key schedule. Each derivation runs once, in order."""

    suite: CipherSuite = CipherSuite.AES_128_GCM_SHA256
    secrets: SecretBundle = field(default_factory=SecretBundle)
    _stage: _Stage = _Stage.FRESH
    _handshake_secret: Optional[bytearray] = None
    _master_secret: Optional[bytearray] = None

    @property
    def params(self) -> SuiteParams:
        return suite_params(self.suite)

    @property
    def hash_name(self) -> str:
        return self.params.hash_name

    def _advance(self, expected: _Stage, nxt: _Stage, what: str) -> None:
        if self._stage is not expected:
            raise OutOfOrder(f"{what} called at stage {self._stage.name}")
        self._stage = nxt

    def derive_handshake_secrets(self, km: SharedKeyMaterial, transcript: bytes) -> tuple[bytes, bytes]:
        if not transcript:
            raise EmptyTranscript("CH..SH transcript is empty")
        if not km.ke:
            raise PskOnlyUnsupported("PSK-only key exchange is not supported")
        if self._stage is not _Stage.FRESH:
            raise OutOfOrder("schedule already used for a handshake")
        hn = self.hash_name
        es = early_secret(km.psk, hn)
        derived = derive_secret(es, "derived", b"", hn)
        hs = hkdf_extract(derived, km.ke, hn)
        self._handshake_secret = bytearray(hs)
        h_c = derive_secret(hs, "c hs traffic", transcript, hn)
        h_s = derive_secret(hs, "s hs traffic", transcript, hn)
        self.secrets.h_c, self.secrets.h_s = bytearray(h_c), bytearray(h_s)
        self._advance(_Stage.FRESH, _Stage.HANDSHAKE, "derive_handshake_secrets")
        return h_c, h_s

    def derive_application_secrets(self, transcript: bytes) -> tuple[bytes, bytes]:
        if self._stage is not _Stage.HANDSHAKE:
            raise OutOfOrder("application secrets need handshake secrets first")
        hn, hlen = self.hash_name, self.params.hash_len
        derived = derive_secret(bytes(self._handshake_secret), "derived", b"", hn)
        ms = hkdf_extract(derived, bytes(hlen), hn)
        self._master_secret = bytearray(ms)
        a_c = derive_secret(ms, "c ap traffic", transcript, hn)
        a_s = derive_secret(ms, "s ap traffic", transcript, hn)
        self.secrets.a_c, self.secrets.a_s = bytearray(a_c), bytearray(a_s)
        self._advance(_Stage.HANDSHAKE, _Stage.APPLICATION, "derive_application_secrets")
        return a_c, a_s

    def derive_resumption_secret(self, transcript: bytes) -> bytes:
        if self._stage is not _Stage.APPLICATION:
            raise OutOfOrder("resumption secret needs application secrets first")
        r = derive_secret(bytes(self._master_secret), "res master", transcript, self.hash_name)
        self.secrets.r = bytearray(r)
        self._advance(_Stage.APPLICATION, _Stage.RESUMPTION, "derive_resumption_secret")
        return r

    @property
    def has_handshake_secrets(self) -> bool:
        return self._stage in (_Stage.HANDSHAKE, _Stage.APPLICATION, _Stage.RESUMPTION)

    @property
    def has_application_secrets(self) -> bool:
        return self._stage in (_Stage.APPLICATION, _Stage.RESUMPTION)

    def zeroize(self) -> None:
        self.secrets.zeroize()
        for buf in (self._handshake_secret, self._master_secret):
            if buf is not None:
                buf[:] = bytes(len(buf))
        self._stage = _Stage.DESTROYED
