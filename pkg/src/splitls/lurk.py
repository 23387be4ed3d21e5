"""LURK frames exchanged between the engine (E) and the crypto service (CS).

Frame layout: ``[version:1][type:1][session_id:8][length:4][payload]``. The
payload is a fixed sequence of length-prefixed vectors per message type;
transcripts use a 4-byte prefix, every other field a 2-byte prefix.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping

VERSION = 1
HEADER_LEN = 14
MAX_FRAME = 1 << 24
RESPONSE_FLAG = 0x80
ERROR_TYPE = 0xFF
NO_SESSION = bytes(8)


class LurkType(IntEnum):
    GET_ECDHE = 1
    GET_HANDSHAKE_SECRETS = 2
    GET_SIG_AND_APP = 3
    NEW_TICKET = 4
    EARLY_SECRET = 5
    GET_APP_SECRET = 6
    GET_RES_SECRET = 7
    ATTEST = 8


class ErrorCode(IntEnum):
    MALFORMED = 1
    UNKNOWN_SESSION = 2
    CONFIG_VIOLATION = 3
    OUT_OF_ORDER = 4
    FRESHNESS_VIOLATION = 5
    REPLAY_DETECTED = 6
    TRANSCRIPT_MISMATCH = 7
    MISSING_KEY_SHARE = 8
    UNSUPPORTED_GROUP = 9
    UNSUPPORTED_SCHEME = 10
    BAD_CLIENT_FINISHED = 11
    UNKNOWN_PSK_ID = 12
    STORE_FULL = 13
    CACHE_EXPIRED = 14
    INTERNAL = 15


class LurkDecodeError(ValueError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class Truncated(LurkDecodeError):
    pass


class BadVersion(LurkDecodeError):
    pass


class UnknownType(LurkDecodeError):
    pass


class MalformedFrame(LurkDecodeError):
    pass


class LurkError(Exception):
    """A CS-side rejection; travels as an ERROR frame."""

    code: ErrorCode = ErrorCode.INTERNAL

    def __init__(self, reason: str = "", code: ErrorCode | None = None) -> None:
        super().__init__(reason or self.__class__.__name__)
        if code is not None:
            self.code = code
        self.reason = reason

    @classmethod
    def from_code(cls, code: int, reason: str) -> LurkError:
        sub = _ERROR_CLASSES.get(code)
        if sub is None:
            return LurkError(reason, ErrorCode.INTERNAL)
        return sub(reason)


class Malformed(LurkError):
    code = ErrorCode.MALFORMED


class UnknownSession(LurkError):
    code = ErrorCode.UNKNOWN_SESSION


class ConfigViolation(LurkError):
    code = ErrorCode.CONFIG_VIOLATION


class OutOfOrder(LurkError):
    code = ErrorCode.OUT_OF_ORDER


class FreshnessViolation(LurkError):
    code = ErrorCode.FRESHNESS_VIOLATION


class ReplayDetected(LurkError):
    code = ErrorCode.REPLAY_DETECTED


class TranscriptMismatch(LurkError):
    code = ErrorCode.TRANSCRIPT_MISMATCH


class MissingKeyShare(LurkError):
    code = ErrorCode.MISSING_KEY_SHARE


class UnsupportedGroup(LurkError):
    code = ErrorCode.UNSUPPORTED_GROUP


class UnsupportedScheme(LurkError):
    code = ErrorCode.UNSUPPORTED_SCHEME


class BadClientFinished(LurkError):
    code = ErrorCode.BAD_CLIENT_FINISHED


class UnknownPskId(LurkError):
    code = ErrorCode.UNKNOWN_PSK_ID


class StoreFull(LurkError):
    code = ErrorCode.STORE_FULL


class CacheExpired(LurkError):
    code = ErrorCode.CACHE_EXPIRED


_ERROR_CLASSES = {c.code: c for c in (Malformed, UnknownSession, ConfigViolation, OutOfOrder,
                                      FreshnessViolation, ReplayDetected, TranscriptMismatch,
                                      MissingKeyShare, UnsupportedGroup, UnsupportedScheme,
                                      BadClientFinished, UnknownPskId, StoreFull, CacheExpired)}


REQUEST_FIELDS: dict[LurkType, tuple[tuple[str, int], ...]] = {
    LurkType.GET_ECDHE: (("group", 2),),
    LurkType.GET_HANDSHAKE_SECRETS: (("transcript", 4), ("n_e", 2), ("ke_shared", 2)),
    LurkType.GET_SIG_AND_APP: (("transcript", 4), ("n_e", 2), ("sig_scheme", 2)),
    LurkType.NEW_TICKET: (("transcript", 4), ("n_e", 2), ("ticket_nonce", 2)),
    LurkType.EARLY_SECRET: (("psk_id", 2), ("truncated_ch", 4)),
    LurkType.GET_APP_SECRET: (("transcript", 4), ("n_e", 2)),
    LurkType.GET_RES_SECRET: (("transcript", 4), ("n_e", 2), ("ticket_nonce", 2)),
    LurkType.ATTEST: (),
}

RESPONSE_FIELDS: dict[LurkType, tuple[tuple[str, int], ...]] = {
    LurkType.GET_ECDHE: (("ke_s", 2),),
    LurkType.GET_HANDSHAKE_SECRETS: (("h_c", 2), ("h_s", 2)),
    LurkType.GET_SIG_AND_APP: (("psign", 2), ("cv_msg", 2), ("fin_e", 2), ("a_c", 2), ("a_s", 2),
                               ("psk_id", 2), ("ticket_nonce", 2)),
    LurkType.NEW_TICKET: (("psk_id", 2),),
    LurkType.EARLY_SECRET: (("binder_key", 2), ("binder_mac", 2), ("suite", 2)),
    LurkType.GET_APP_SECRET: (("a_c", 2), ("a_s", 2)),
    LurkType.GET_RES_SECRET: (("psk_id", 2),),
    LurkType.ATTEST: (("measurement", 2), ("h_ctx_hash", 2), ("signature", 2)),
}

ERROR_FIELDS = (("code", 2), ("reason", 2))


def u16(value: int) -> bytes:
    return value.to_bytes(2, "big")


def _valid_type(t: int) -> bool:
    return t == ERROR_TYPE or (t & 0x7F) in LurkType._value2member_map_


def _schema(msg_type: int) -> tuple[tuple[str, int], ...]:
    if msg_type == ERROR_TYPE:
        return ERROR_FIELDS
    if msg_type & RESPONSE_FLAG:
        return RESPONSE_FIELDS[LurkType(msg_type & 0x7F)]
    return REQUEST_FIELDS[LurkType(msg_type)]


def encode_fields(msg_type: int, values: Mapping[str, bytes]) -> bytes:
    out = []
    for name, width in _schema(msg_type):
        data = bytes(values.get(name, b""))
        if len(data) >= 1 << (8 * width):
            raise ValueError(f"field {name} too long for a {width}-byte prefix")
        out.append(len(data).to_bytes(width, "big") + data)
    return b"".join(out)


def decode_fields(msg_type: int, payload: bytes) -> dict[str, bytes]:
    """Split a payload into named fields; raises Malformed on any mismatch."""
    values = {}
    pos = 0
    for name, width in _schema(msg_type):
        if pos + width > len(payload):
            raise Malformed(f"payload ends before {name} length")
        n = int.from_bytes(payload[pos:pos + width], "big")
        pos += width
        if pos + n > len(payload):
            raise Malformed(f"payload ends inside {name}")
        values[name] = bytes(payload[pos:pos + n])
        pos += n
    if pos != len(payload):
        raise Malformed(f"{len(payload) - pos} trailing payload bytes")
    return values


@dataclass(frozen=True)
class LurkMessage:
    msg_type: int
    session_id: bytes = NO_SESSION
    payload: bytes = b""
    version: int = VERSION

    @classmethod
    def request(cls, msg_type: LurkType, session_id: bytes = NO_SESSION, **fields: bytes) -> LurkMessage:
        return cls(int(msg_type), session_id, encode_fields(msg_type, fields))

    @classmethod
    def response(cls, req_type: LurkType, session_id: bytes, **fields: bytes) -> LurkMessage:
        t = RESPONSE_FLAG | int(req_type)
        return cls(t, session_id, encode_fields(t, fields))

    @classmethod
    def error(cls, session_id: bytes, code: int, reason: str) -> LurkMessage:
        return cls(ERROR_TYPE, session_id,
                   encode_fields(ERROR_TYPE, {"code": u16(code), "reason": reason.encode()[:1024]}))

    @property
    def is_error(self) -> bool:
        return self.msg_type == ERROR_TYPE

    @property
    def is_response(self) -> bool:
        return self.msg_type != ERROR_TYPE and bool(self.msg_type & RESPONSE_FLAG)

    @property
    def request_type(self) -> LurkType:
        return LurkType(self.msg_type & 0x7F)

    def fields(self) -> dict[str, bytes]:
        return decode_fields(self.msg_type, self.payload)

    def raise_for_error(self) -> None:
        if self.is_error:
            f = self.fields()
            raise LurkError.from_code(int.from_bytes(f["code"], "big"), f["reason"].decode(errors="replace"))


def encode_lurk(msg: LurkMessage) -> bytes:
    if len(msg.session_id) != 8:
        raise ValueError("session_id must be 8 bytes")
    if not _valid_type(msg.msg_type):
        raise ValueError(f"unknown LURK type {msg.msg_type}")
    frame_len = HEADER_LEN + len(msg.payload)
    if frame_len > MAX_FRAME:
        raise ValueError(f"frame of {frame_len} bytes exceeds 2^24")
    return (bytes([msg.version, msg.msg_type]) + msg.session_id
            + len(msg.payload).to_bytes(4, "big") + msg.payload)


def frame_length(header: bytes) -> int:
    """Payload length announced by a 14-byte header, validating the limits."""
    n = int.from_bytes(header[10:14], "big")
    if HEADER_LEN + n > MAX_FRAME:
        raise MalformedFrame(f"announced length {n} exceeds the frame limit", 10)
    return n


def decode_lurk(frame: bytes) -> LurkMessage:
    frame = bytes(frame)
    if len(frame) < HEADER_LEN:
        raise Truncated(f"frame shorter than the {HEADER_LEN}-byte header", len(frame))
    if frame[0] != VERSION:
        raise BadVersion(f"unsupported LURK version {frame[0]}", 0)
    if not _valid_type(frame[1]):
        raise UnknownType(f"unknown LURK type {frame[1]}", 1)
    n = frame_length(frame[:HEADER_LEN])
    if len(frame) < HEADER_LEN + n:
        raise Truncated(f"payload needs {n} bytes, have {len(frame) - HEADER_LEN}", len(frame))
    if len(frame) > HEADER_LEN + n:
        raise MalformedFrame("trailing bytes after payload", HEADER_LEN + n)
    return LurkMessage(frame[1], frame[2:10], frame[HEADER_LEN:], frame[0])


def new_session_id() -> bytes:
    while True:
        sid = os.urandom(8)
        if sid != NO_SESSION:
            return sid
