"""TLS 1.3 record layer: plaintext records, AEAD protection and stream reassembly."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305

from .codec import CipherSuite
from .key_schedule import hkdf_expand_label, suite_params

MAX_PLAINTEXT = 1 << 14
MAX_CIPHERTEXT = MAX_PLAINTEXT + 256
SEQ_LIMIT = (1 << 64) - 1


class ContentType(IntEnum):
    CHANGE_CIPHER_SPEC = 20
    ALERT = 21
    HANDSHAKE = 22
    APPLICATION_DATA = 23


class RecordError(ValueError):
    pass


class SeqExhausted(RecordError):
    pass


class AuthFailure(RecordError):
    pass


class BadContentType(RecordError):
    pass


class RecordOverflow(RecordError):
    pass


@dataclass
class TrafficKeys:
    """Key, IV and sequence number for one direction of one session."""

    key: bytearray
    iv: bytearray
    suite: CipherSuite = CipherSuite.AES_128_GCM_SHA256
    seq: int = 0

    def _aead(self):
        if suite_params(self.suite).aead == "chacha20":
            return ChaCha20Poly1305(bytes(self.key))
        return AESGCM(bytes(self.key))

    def _nonce(self) -> bytes:
        padded = self.seq.to_bytes(len(self.iv), "big")
        return bytes(a ^ b for a, b in zip(self.iv, padded))

    def seal(self, plaintext: bytes, content_type: int) -> bytes:
        if self.seq >= SEQ_LIMIT:
            raise SeqExhausted("record sequence number exhausted")
        if len(plaintext) > MAX_PLAINTEXT:
            raise RecordOverflow(f"plaintext of {len(plaintext)} bytes exceeds 2^14")
        inner = bytes(plaintext) + bytes([content_type])
        length = len(inner) + 16
        header = bytes([ContentType.APPLICATION_DATA, 0x03, 0x03]) + length.to_bytes(2, "big")
        ct = self._aead().encrypt(self._nonce(), inner, header)
        self.seq += 1
        return header + ct

    def open(self, record: bytes) -> tuple[bytes, int]:
        if len(record) < 5 + 17:
            raise AuthFailure("record too short to be protected")
        header, body = bytes(record[:5]), bytes(record[5:])
        if header[0] != ContentType.APPLICATION_DATA:
            raise BadContentType(f"outer content type {header[0]} is not application_data")
        if int.from_bytes(header[3:5], "big") != len(body) or len(body) > MAX_CIPHERTEXT:
            raise AuthFailure("record length field does not match body")
        if self.seq >= SEQ_LIMIT:
            raise SeqExhausted("record sequence number exhausted")
        try:
            inner = self._aead().decrypt(self._nonce(), body, header)
        except InvalidTag:
            raise AuthFailure("record failed authentication") from None
        self.seq += 1
        end = len(inner)
        while end and inner[end - 1] == 0:
            end -= 1
        if end == 0:
            raise BadContentType("inner plaintext has no content type")
        ctype = inner[end - 1]
        if ctype not in (ContentType.ALERT, ContentType.HANDSHAKE, ContentType.APPLICATION_DATA):
            raise BadContentType(f"inner content type {ctype} not allowed")
        return inner[:end - 1], ctype

    def zeroize(self) -> None:
        self.key[:] = bytes(len(self.key))
        self.iv[:] = bytes(len(self.iv))


def derive_traffic_keys(traffic_secret: bytes, suite: int = CipherSuite.AES_128_GCM_SHA256) -> TrafficKeys:
    p = suite_params(suite)
    key = hkdf_expand_label(traffic_secret, "key", b"", p.key_len, p.hash_name)
    iv = hkdf_expand_label(traffic_secret, "iv", b"", p.iv_len, p.hash_name)
    return TrafficKeys(bytearray(key), bytearray(iv), CipherSuite(suite))


def plaintext_record(content_type: int, payload: bytes, legacy_version: int = 0x0303) -> bytes:
    if len(payload) > MAX_PLAINTEXT:
        raise RecordOverflow("plaintext record too large")
    return bytes([content_type]) + legacy_version.to_bytes(2, "big") + len(payload).to_bytes(2, "big") + payload


def seal_fragmented(tk: TrafficKeys, data: bytes, content_type: int) -> bytes:
    """Seal ``data`` as one or more records of at most 2^14 plaintext bytes."""
    if not data:
        return tk.seal(b"", content_type)
    return b"".join(tk.seal(data[i:i + MAX_PLAINTEXT], content_type)
                    for i in range(0, len(data), MAX_PLAINTEXT))


class RecordBuffer:
    """Reassembles a byte stream into whole records."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    def __iter__(self) -> Iterator[bytes]:
        while len(self._buf) >= 5:
            length = int.from_bytes(self._buf[3:5], "big")
            if length > MAX_CIPHERTEXT:
                raise RecordOverflow(f"record length {length} too large")
            if len(self._buf) < 5 + length:
                return
            rec = bytes(self._buf[:5 + length])
            del self._buf[:5 + length]
            yield rec

    @property
    def pending(self) -> int:
        return len(self._buf)
