"""TLS 1.3 handshake message codec and the full-byte handshake transcript.

Only the message subset a certificate or PSK-with-(EC)DHE handshake needs is
understood. Extensions are carried as raw bytes so that ``encode(decode(b))``
is byte-exact even for extensions this module does not interpret.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import ClassVar, Iterator, Optional, Union

TLS13 = 0x0304
LEGACY_VERSION = 0x0303
MAX_BODY = (1 << 24) - 1
PSK_DHE_KE = 1


class HandshakeType(IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    NEW_SESSION_TICKET = 4
    ENCRYPTED_EXTENSIONS = 8
    CERTIFICATE = 11
    CERTIFICATE_VERIFY = 15
    FINISHED = 20


class ExtensionType(IntEnum):
    SERVER_NAME = 0
    SUPPORTED_GROUPS = 10
    SIGNATURE_ALGORITHMS = 13
    PRE_SHARED_KEY = 41
    SUPPORTED_VERSIONS = 43
    PSK_KEY_EXCHANGE_MODES = 45
    KEY_SHARE = 51


class CipherSuite(IntEnum):
    AES_128_GCM_SHA256 = 0x1301
    AES_256_GCM_SHA384 = 0x1302
    CHACHA20_POLY1305_SHA256 = 0x1303


class Group(IntEnum):
    SECP256R1 = 0x0017
    SECP384R1 = 0x0018
    X25519 = 0x001D
    X448 = 0x001E


class SignatureScheme(IntEnum):
    ECDSA_SECP256R1_SHA256 = 0x0403
    ECDSA_SECP384R1_SHA384 = 0x0503
    ED25519 = 0x0807
    ED448 = 0x0808


class DecodeError(ValueError):
    """Structured decoding failure; ``offset`` is where parsing stopped."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class Truncated(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class MalformedExtension(DecodeError):
    pass


class MalformedMessage(DecodeError):
    pass


class OversizeBody(ValueError):
    pass


class MissingMessage(LookupError):
    pass


class _Reader:
    def __init__(self, data: bytes, base: int = 0) -> None:
        self.data = data
        self.pos = 0
        self.base = base

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str, error: type = Truncated) -> bytes:
        if self.pos + n > len(self.data):
            raise error(f"{what}: need {n} bytes, have {self.remaining()}", self.offset)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def uint(self, width: int, what: str, error: type = Truncated) -> int:
        return int.from_bytes(self.take(width, what, error), "big")

    def vector(self, width: int, what: str, error: type = Truncated) -> bytes:
        n = self.uint(width, f"{what} length", error)
        return self.take(n, what, error)

    def end(self, what: str, error: type = MalformedMessage) -> None:
        if self.pos != len(self.data):
            raise error(f"{self.remaining()} trailing bytes after {what}", self.offset)


def _vec(width: int, data: bytes) -> bytes:
    if len(data) >= 1 << (8 * width):
        raise OversizeBody(f"vector of {len(data)} bytes does not fit a {width}-byte length")
    return len(data).to_bytes(width, "big") + data


@dataclass(frozen=True)
class Extension:
    type: int
    data: bytes

    def encode(self) -> bytes:
        return struct.pack("!H", self.type) + _vec(2, self.data)


def _encode_extensions(exts: list[Extension]) -> bytes:
    return _vec(2, b"".join(e.encode() for e in exts))


def _decode_extensions(r: _Reader) -> list[Extension]:
    start = r.offset
    block = r.vector(2, "extensions")
    er = _Reader(block, start + 2)
    out: list[Extension] = []
    seen: set[int] = set()
    while er.remaining():
        at = er.offset
        etype = er.uint(2, "extension type", MalformedExtension)
        data = er.vector(2, "extension data", MalformedExtension)
        if etype in seen:
            raise MalformedExtension(f"duplicate extension {etype}", at)
        seen.add(etype)
        out.append(Extension(etype, data))
    return out


def _find(exts: list[Extension], etype: int) -> Optional[bytes]:
    for e in exts:
        if e.type == etype:
            return e.data
    return None


# -- extension payload parsers/builders ---------------------------------------

def _u16_list(data: bytes, width: int, what: str) -> list[int]:
    r = _Reader(data)
    body = r.vector(width, what, MalformedExtension)
    r.end(what, MalformedExtension)
    if len(body) % 2:
        raise MalformedExtension(f"{what}: odd length", width)
    return [int.from_bytes(body[i:i + 2], "big") for i in range(0, len(body), 2)]


def build_supported_versions_client(versions: list[int]) -> Extension:
    return Extension(ExtensionType.SUPPORTED_VERSIONS,
                     _vec(1, b"".join(struct.pack("!H", v) for v in versions)))


def build_supported_versions_server(version: int = TLS13) -> Extension:
    return Extension(ExtensionType.SUPPORTED_VERSIONS, struct.pack("!H", version))


def build_supported_groups(groups: list[int]) -> Extension:
    return Extension(ExtensionType.SUPPORTED_GROUPS,
                     _vec(2, b"".join(struct.pack("!H", g) for g in groups)))


def build_signature_algorithms(schemes: list[int]) -> Extension:
    return Extension(ExtensionType.SIGNATURE_ALGORITHMS,
                     _vec(2, b"".join(struct.pack("!H", s) for s in schemes)))


def build_key_share_client(shares: list[tuple[int, bytes]]) -> Extension:
    entries = b"".join(struct.pack("!H", g) + _vec(2, k) for g, k in shares)
    return Extension(ExtensionType.KEY_SHARE, _vec(2, entries))


def build_key_share_server(group: int, key: bytes) -> Extension:
    return Extension(ExtensionType.KEY_SHARE, struct.pack("!H", group) + _vec(2, key))


def build_server_name(host: bytes) -> Extension:
    entry = b"\x00" + _vec(2, host)
    return Extension(ExtensionType.SERVER_NAME, _vec(2, entry))


def build_psk_modes(modes: list[int]) -> Extension:
    return Extension(ExtensionType.PSK_KEY_EXCHANGE_MODES, _vec(1, bytes(modes)))


def build_pre_shared_key_client(identities: list[tuple[bytes, int]], binders: list[bytes]) -> Extension:
    ids = b"".join(_vec(2, ident) + struct.pack("!I", age) for ident, age in identities)
    bnd = b"".join(_vec(1, b) for b in binders)
    return Extension(ExtensionType.PRE_SHARED_KEY, _vec(2, ids) + _vec(2, bnd))


def build_pre_shared_key_server(selected: int) -> Extension:
    return Extension(ExtensionType.PRE_SHARED_KEY, struct.pack("!H", selected))


@dataclass(frozen=True)
class OfferedPsks:
    identities: list[tuple[bytes, int]]
    binders: list[bytes]

    def binders_length(self) -> int:
        """Encoded size of the binders list, including its 2-byte length."""
        return 2 + sum(1 + len(b) for b in self.binders)


def parse_offered_psks(data: bytes) -> OfferedPsks:
    r = _Reader(data)
    ids_raw = r.vector(2, "psk identities", MalformedExtension)
    binders_raw = r.vector(2, "psk binders", MalformedExtension)
    r.end("pre_shared_key", MalformedExtension)
    ir = _Reader(ids_raw, 2)
    identities = []
    while ir.remaining():
        ident = ir.vector(2, "psk identity", MalformedExtension)
        age = ir.uint(4, "obfuscated ticket age", MalformedExtension)
        identities.append((ident, age))
    br = _Reader(binders_raw, 4 + len(ids_raw))
    binders = []
    while br.remaining():
        binders.append(br.vector(1, "psk binder", MalformedExtension))
    if not identities or len(identities) != len(binders):
        raise MalformedExtension("psk identities and binders do not pair up", 0)
    return OfferedPsks(identities, binders)


def parse_client_key_shares(data: bytes) -> list[tuple[int, bytes]]:
    r = _Reader(data)
    body = r.vector(2, "client key shares", MalformedExtension)
    r.end("key_share", MalformedExtension)
    kr = _Reader(body, 2)
    out = []
    while kr.remaining():
        group = kr.uint(2, "key share group", MalformedExtension)
        key = kr.vector(2, "key exchange", MalformedExtension)
        if not key:
            raise MalformedExtension("empty key exchange", kr.offset)
        out.append((group, key))
    return out


def parse_server_key_share(data: bytes) -> tuple[int, bytes]:
    r = _Reader(data)
    group = r.uint(2, "key share group", MalformedExtension)
    key = r.vector(2, "key exchange", MalformedExtension)
    r.end("key_share", MalformedExtension)
    return group, key


def _validate_extension(ext: Extension, msg: HandshakeType) -> None:
    t, d = ext.type, ext.data
    client = msg is HandshakeType.CLIENT_HELLO
    if t == ExtensionType.SUPPORTED_VERSIONS:
        if client:
            r = _Reader(d)
            body = r.vector(1, "supported_versions", MalformedExtension)
            r.end("supported_versions", MalformedExtension)
            if not body or len(body) % 2:
                raise MalformedExtension("supported_versions: bad list length", 1)
        elif len(d) != 2:
            raise MalformedExtension("supported_versions: expected 2 bytes", 0)
    elif t == ExtensionType.KEY_SHARE:
        parse_client_key_shares(d) if client else parse_server_key_share(d)
    elif t in (ExtensionType.SUPPORTED_GROUPS, ExtensionType.SIGNATURE_ALGORITHMS):
        _u16_list(d, 2, ExtensionType(t).name.lower())
    elif t == ExtensionType.PSK_KEY_EXCHANGE_MODES:
        r = _Reader(d)
        if not r.vector(1, "psk modes", MalformedExtension):
            raise MalformedExtension("psk modes: empty", 1)
        r.end("psk_key_exchange_modes", MalformedExtension)
    elif t == ExtensionType.PRE_SHARED_KEY:
        if client:
            parse_offered_psks(d)
        elif len(d) != 2:
            raise MalformedExtension("pre_shared_key: expected selected identity", 0)


class _HasExtensions:
    extensions: list[Extension]

    def extension(self, etype: int) -> Optional[bytes]:
        return _find(self.extensions, etype)


# -- messages -----------------------------------------------------------------

@dataclass
class ClientHello(_HasExtensions):
    random: bytes
    cipher_suites: list[int]
    extensions: list[Extension] = field(default_factory=list)
    legacy_session_id: bytes = b""
    legacy_version: int = LEGACY_VERSION
    compression_methods: bytes = b"\x00"

    msg_type: ClassVar[HandshakeType] = HandshakeType.CLIENT_HELLO

    def encode_body(self) -> bytes:
        if len(self.random) != 32:
            raise ValueError("ClientHello.random must be 32 bytes")
        suites = b"".join(struct.pack("!H", s) for s in self.cipher_suites)
        return (struct.pack("!H", self.legacy_version) + self.random
                + _vec(1, self.legacy_session_id) + _vec(2, suites)
                + _vec(1, self.compression_methods) + _encode_extensions(self.extensions))

    @classmethod
    def decode_body(cls, r: _Reader) -> ClientHello:
        version = r.uint(2, "legacy_version")
        random = r.take(32, "random")
        sid = r.vector(1, "legacy_session_id")
        if len(sid) > 32:
            raise MalformedMessage("legacy_session_id longer than 32", r.offset)
        suites_raw = r.vector(2, "cipher_suites")
        if len(suites_raw) % 2 or not suites_raw:
            raise MalformedMessage("cipher_suites: bad length", r.offset)
        comp = r.vector(1, "compression_methods")
        exts = _decode_extensions(r)
        r.end("ClientHello")
        for i, e in enumerate(exts):
            _validate_extension(e, cls.msg_type)
            if e.type == ExtensionType.PRE_SHARED_KEY and i != len(exts) - 1:
                raise MalformedExtension("pre_shared_key is not the last extension", 0)
        suites = [int.from_bytes(suites_raw[i:i + 2], "big") for i in range(0, len(suites_raw), 2)]
        return cls(random, suites, exts, sid, version, comp)

    @property
    def supported_versions(self) -> list[int]:
        data = self.extension(ExtensionType.SUPPORTED_VERSIONS)
        if data is None:
            return []
        return [int.from_bytes(data[i:i + 2], "big") for i in range(1, len(data), 2)]

    @property
    def key_shares(self) -> list[tuple[int, bytes]]:
        data = self.extension(ExtensionType.KEY_SHARE)
        return parse_client_key_shares(data) if data is not None else []

    @property
    def supported_groups(self) -> list[int]:
        data = self.extension(ExtensionType.SUPPORTED_GROUPS)
        return _u16_list(data, 2, "supported_groups") if data is not None else []

    @property
    def signature_algorithms(self) -> list[int]:
        data = self.extension(ExtensionType.SIGNATURE_ALGORITHMS)
        return _u16_list(data, 2, "signature_algorithms") if data is not None else []

    @property
    def psk_modes(self) -> list[int]:
        data = self.extension(ExtensionType.PSK_KEY_EXCHANGE_MODES)
        return list(data[1:]) if data is not None else []

    @property
    def offered_psks(self) -> Optional[OfferedPsks]:
        data = self.extension(ExtensionType.PRE_SHARED_KEY)
        return parse_offered_psks(data) if data is not None else None


@dataclass
class ServerHello(_HasExtensions):
    random: bytes
    cipher_suite: int
    extensions: list[Extension] = field(default_factory=list)
    legacy_session_id_echo: bytes = b""
    legacy_version: int = LEGACY_VERSION
    compression_method: int = 0

    msg_type: ClassVar[HandshakeType] = HandshakeType.SERVER_HELLO

    def encode_body(self) -> bytes:
        if len(self.random) != 32:
            raise ValueError("ServerHello.random must be 32 bytes")
        return (struct.pack("!H", self.legacy_version) + self.random
                + _vec(1, self.legacy_session_id_echo)
                + struct.pack("!HB", self.cipher_suite, self.compression_method)
                + _encode_extensions(self.extensions))

    @classmethod
    def decode_body(cls, r: _Reader) -> ServerHello:
        version = r.uint(2, "legacy_version")
        random = r.take(32, "random")
        sid = r.vector(1, "legacy_session_id_echo")
        if len(sid) > 32:
            raise MalformedMessage("legacy_session_id_echo longer than 32", r.offset)
        suite = r.uint(2, "cipher_suite")
        comp = r.uint(1, "compression_method")
        exts = _decode_extensions(r)
        r.end("ServerHello")
        for e in exts:
            _validate_extension(e, cls.msg_type)
        return cls(random, suite, exts, sid, version, comp)

    @property
    def selected_version(self) -> Optional[int]:
        data = self.extension(ExtensionType.SUPPORTED_VERSIONS)
        return int.from_bytes(data, "big") if data is not None else None

    @property
    def key_share(self) -> Optional[tuple[int, bytes]]:
        data = self.extension(ExtensionType.KEY_SHARE)
        return parse_server_key_share(data) if data is not None else None

    @property
    def selected_psk(self) -> Optional[int]:
        data = self.extension(ExtensionType.PRE_SHARED_KEY)
        return int.from_bytes(data, "big") if data is not None else None


@dataclass
class EncryptedExtensions(_HasExtensions):
    extensions: list[Extension] = field(default_factory=list)

    msg_type: ClassVar[HandshakeType] = HandshakeType.ENCRYPTED_EXTENSIONS

    def encode_body(self) -> bytes:
        return _encode_extensions(self.extensions)

    @classmethod
    def decode_body(cls, r: _Reader) -> EncryptedExtensions:
        exts = _decode_extensions(r)
        r.end("EncryptedExtensions")
        return cls(exts)


@dataclass
class CertificateEntry:
    cert_data: bytes
    extensions: list[Extension] = field(default_factory=list)


@dataclass
class Certificate:
    entries: list[CertificateEntry]
    request_context: bytes = b""

    msg_type: ClassVar[HandshakeType] = HandshakeType.CERTIFICATE

    def encode_body(self) -> bytes:
        lst = b"".join(_vec(3, e.cert_data) + _encode_extensions(e.extensions) for e in self.entries)
        return _vec(1, self.request_context) + _vec(3, lst)

    @classmethod
    def decode_body(cls, r: _Reader) -> Certificate:
        ctx = r.vector(1, "certificate_request_context")
        start = r.offset
        lst = r.vector(3, "certificate_list")
        r.end("Certificate")
        lr = _Reader(lst, start + 3)
        entries = []
        while lr.remaining():
            data = lr.vector(3, "cert_data")
            entries.append(CertificateEntry(data, _decode_extensions(lr)))
        return cls(entries, ctx)


@dataclass
class CertificateVerify:
    algorithm: int
    signature: bytes

    msg_type: ClassVar[HandshakeType] = HandshakeType.CERTIFICATE_VERIFY

    def encode_body(self) -> bytes:
        return struct.pack("!H", self.algorithm) + _vec(2, self.signature)

    @classmethod
    def decode_body(cls, r: _Reader) -> CertificateVerify:
        alg = r.uint(2, "algorithm")
        sig = r.vector(2, "signature")
        r.end("CertificateVerify")
        return cls(alg, sig)


@dataclass
class Finished:
    verify_data: bytes

    msg_type: ClassVar[HandshakeType] = HandshakeType.FINISHED

    def encode_body(self) -> bytes:
        return self.verify_data

    @classmethod
    def decode_body(cls, r: _Reader) -> Finished:
        return cls(r.take(r.remaining(), "verify_data"))


@dataclass
class NewSessionTicket(_HasExtensions):
    lifetime: int
    age_add: int
    nonce: bytes
    ticket: bytes
    extensions: list[Extension] = field(default_factory=list)

    msg_type: ClassVar[HandshakeType] = HandshakeType.NEW_SESSION_TICKET

    def encode_body(self) -> bytes:
        return (struct.pack("!II", self.lifetime, self.age_add) + _vec(1, self.nonce)
                + _vec(2, self.ticket) + _encode_extensions(self.extensions))

    @classmethod
    def decode_body(cls, r: _Reader) -> NewSessionTicket:
        lifetime = r.uint(4, "ticket_lifetime")
        age_add = r.uint(4, "ticket_age_add")
        nonce = r.vector(1, "ticket_nonce")
        ticket = r.vector(2, "ticket")
        if not ticket:
            raise MalformedMessage("empty ticket", r.offset)
        exts = _decode_extensions(r)
        r.end("NewSessionTicket")
        return cls(lifetime, age_add, nonce, ticket, exts)


HandshakeMessage = Union[ClientHello, ServerHello, EncryptedExtensions, Certificate,
                         CertificateVerify, Finished, NewSessionTicket]

_DECODERS = {cls.msg_type: cls for cls in (ClientHello, ServerHello, EncryptedExtensions,
                                          Certificate, CertificateVerify, Finished,
                                          NewSessionTicket)}


def encode_message(msg: HandshakeMessage) -> bytes:
    body = msg.encode_body()
    if len(body) > MAX_BODY:
        raise OversizeBody(f"handshake body of {len(body)} bytes exceeds 2^24-1")
    return bytes([msg.msg_type]) + len(body).to_bytes(3, "big") + body


def decode_message(data: bytes) -> HandshakeMessage:
    """Decode exactly one handshake message; raises a DecodeError subclass."""
    r = _Reader(bytes(data))
    mtype = r.uint(1, "handshake type")
    length = r.uint(3, "handshake length")
    if mtype not in _DECODERS:
        raise UnknownType(f"unsupported handshake type {mtype}", 0)
    body = r.take(length, "handshake body")
    r.end("handshake message")
    return _DECODERS[mtype].decode_body(_Reader(body, 4))


def split_messages(data: bytes) -> tuple[list[bytes], bytes]:
    """Split concatenated handshake messages; returns (complete, leftover)."""
    out = []
    pos = 0
    while len(data) - pos >= 4:
        length = int.from_bytes(data[pos + 1:pos + 4], "big")
        if len(data) - pos - 4 < length:
            break
        out.append(bytes(data[pos:pos + 4 + length]))
        pos += 4 + length
    return out, bytes(data[pos:])


def parse_transcript(data: bytes) -> list[tuple[HandshakeType, bytes]]:
    """Split a transcript byte string into (type, message bytes) pairs."""
    msgs, rest = split_messages(data)
    if rest:
        raise Truncated("transcript ends inside a message", len(data) - len(rest))
    out = []
    offset = 0
    for m in msgs:
        if m[0] not in _DECODERS:
            raise UnknownType(f"unsupported handshake type {m[0]}", offset)
        out.append((HandshakeType(m[0]), m))
        offset += len(m)
    return out


def truncate_client_hello(encoded: bytes) -> bytes:
    """ClientHello bytes up to (excluding) the binders list, for binder MACs."""
    ch = decode_message(encoded)
    if not isinstance(ch, ClientHello) or ch.offered_psks is None:
        raise ValueError("not a ClientHello offering a PSK")
    return bytes(encoded[:len(encoded) - ch.offered_psks.binders_length()])


@dataclass
class HandshakeTranscript:
    """Append-only list of full handshake message bytes in arrival order."""

    messages: list[tuple[HandshakeType, bytes]] = field(default_factory=list)

    def append(self, raw: bytes) -> None:
        if len(raw) < 4 or raw[0] not in _DECODERS:
            raise ValueError("not a handshake message")
        self.messages.append((HandshakeType(raw[0]), bytes(raw)))

    def __len__(self) -> int:
        return len(self.messages)

    def kinds(self) -> list[HandshakeType]:
        return [k for k, _ in self.messages]

    def get(self, kind: HandshakeType, occurrence: int = 0) -> bytes:
        found = [raw for k, raw in self.messages if k == kind]
        if len(found) <= occurrence:
            raise MissingMessage(f"{kind.name} (occurrence {occurrence}) not in transcript")
        return found[occurrence]

    def prefix_bytes(self, upto: HandshakeType, occurrence: int = 0) -> bytes:
        seen = 0
        for i, (k, _) in enumerate(self.messages):
            if k == upto:
                if seen == occurrence:
                    return b"".join(raw for _, raw in self.messages[:i + 1])
                seen += 1
        raise MissingMessage(f"{upto.name} (occurrence {occurrence}) not in transcript")

    def to_bytes(self) -> bytes:
        return b"".join(raw for _, raw in self.messages)

    def __iter__(self) -> Iterator[tuple[HandshakeType, bytes]]:
        return iter(self.messages)


def transcript_prefix_bytes(t: HandshakeTranscript, upto: HandshakeType) -> bytes:
    return t.prefix_bytes(upto)


def transcript_hash(hash_name: str, data: bytes) -> bytes:
    return hashlib.new(hash_name, data).digest()
