"""Transports carrying LURK frames between engine and crypto service.

* in-process: the frame is handed to ``CryptoService.handle_frame`` directly;
* local socket: plaintext frames over a unix-domain stream socket;
* remote: frames over TCP, each sealed with AES-GCM under keys derived from a
  32-byte pre-shared channel key and both sides' connection randoms.

Remote records are ``[seq:8][len:4][ciphertext]`` with the 12-byte header as
associated data and the nonce ``iv XOR seq``. A record that fails
authentication raises ChannelAuthFailure; an authentic record with an
unexpected sequence number raises SequenceViolation.
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .key_schedule import hkdf_expand, hkdf_extract
from .lurk import HEADER_LEN, LurkMessage, decode_lurk, encode_lurk, frame_length

log = logging.getLogger("splitls.channel")

CHANNEL_MAGIC = b"LRKT"
CHANNEL_KEY_LEN = 32
_SEALED_HEADER = 12

Tap = Callable[[str, bytes], None]


class ChannelError(Exception):
    pass


class ChannelAuthFailure(ChannelError):
    pass


class SequenceViolation(ChannelError):
    pass


class ChannelClosed(ChannelError):
    pass


class ChannelMode(Enum):
    IN_PROCESS = "inprocess"
    LOCAL_SOCKET = "unix"
    REMOTE = "tcp"


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode
    address: Optional[str | tuple[str, int]] = None
    channel_key: Optional[bytes] = None

    def __post_init__(self) -> None:
        if self.mode is ChannelMode.REMOTE:
            if self.channel_key is None or len(self.channel_key) != CHANNEL_KEY_LEN:
                raise ValueError("remote channels need a 32-byte channel key")
        if self.mode is not ChannelMode.IN_PROCESS and self.address is None:
            raise ValueError(f"{self.mode.value} channels need an address")

    @classmethod
    def parse(cls, spec: str, channel_key: Optional[bytes] = None) -> ChannelConfig:
        """Parse ``inprocess``, ``unix:PATH`` or ``tcp:HOST:PORT``."""
        if spec == "inprocess":
            return cls(ChannelMode.IN_PROCESS)
        if spec.startswith("unix:"):
            return cls(ChannelMode.LOCAL_SOCKET, spec[5:])
        if spec.startswith("tcp:"):
            host, _, port = spec[4:].rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp endpoint {spec!r}; expected tcp:HOST:PORT")
            return cls(ChannelMode.REMOTE, (host, int(port)), channel_key)
        raise ValueError(f"bad channel {spec!r}; expected inprocess, unix:PATH or tcp:HOST:PORT")


def read_channel_key(path: str | Path) -> bytes:
    """Channel keys are stored as 64 hex characters."""
    key = bytes.fromhex(Path(path).read_text().strip())
    if len(key) != CHANNEL_KEY_LEN:
        raise ValueError(f"channel key in {path} is {len(key)} bytes, expected 32")
    return key


class SecureFramer:
    """Sealing and opening for one end of a remote channel."""

    def __init__(self, channel_key: bytes, r_e: bytes, r_cs: bytes, initiator: bool) -> None:
        prk = hkdf_extract(r_e + r_cs, channel_key)
        keys = {}
        for direction in (b"e2cs", b"cs2e"):
            keys[direction] = (hkdf_expand(prk, direction + b" key", 32), hkdf_expand(prk, direction + b" iv", 12))
        send, recv = (b"e2cs", b"cs2e") if initiator else (b"cs2e", b"e2cs")
        self._send_aead, self._send_iv = AESGCM(keys[send][0]), keys[send][1]
        self._recv_aead, self._recv_iv = AESGCM(keys[recv][0]), keys[recv][1]
        self.send_seq = 0
        self.recv_seq = 0

    @staticmethod
    def _nonce(iv: bytes, seq: int) -> bytes:
        return bytes(a ^ b for a, b in zip(iv, seq.to_bytes(12, "big")))

    def seal(self, plaintext: bytes) -> bytes:
        seq = self.send_seq
        header = seq.to_bytes(8, "big") + (len(plaintext) + 16).to_bytes(4, "big")
        ct = self._send_aead.encrypt(self._nonce(self._send_iv, seq), plaintext, header)
        self.send_seq += 1
        return header + ct

    def open(self, record: bytes) -> bytes:
        if len(record) < _SEALED_HEADER + 16:
            raise ChannelAuthFailure("sealed record too short")
        header, ct = record[:_SEALED_HEADER], record[_SEALED_HEADER:]
        seq = int.from_bytes(header[:8], "big")
        if int.from_bytes(header[8:], "big") != len(ct):
            raise ChannelAuthFailure("sealed record length mismatch")
        try:
            plaintext = self._recv_aead.decrypt(self._nonce(self._recv_iv, seq), ct, header)
        except InvalidTag:
            raise ChannelAuthFailure("sealed record failed authentication") from None
        if seq != self.recv_seq:
            raise SequenceViolation(f"expected record {self.recv_seq}, got {seq}")
        self.recv_seq += 1
        return plaintext


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelClosed("peer closed the channel")
        buf += chunk
    return bytes(buf)


def read_plain_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, HEADER_LEN)
    return header + _recv_exact(sock, frame_length(header))


def read_sealed_record(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, _SEALED_HEADER)
    n = int.from_bytes(header[8:], "big")
    if n > (1 << 24) + 16:
        raise ChannelAuthFailure("sealed record too large")
    return header + _recv_exact(sock, n)


def remote_handshake_initiator(sock: socket.socket, channel_key: bytes) -> SecureFramer:
    r_e = os.urandom(32)
    sock.sendall(CHANNEL_MAGIC + r_e)
    reply = _recv_exact(sock, 36)
    if reply[:4] != CHANNEL_MAGIC:
        raise ChannelAuthFailure("peer is not a LURK channel endpoint")
    return SecureFramer(channel_key, r_e, reply[4:], initiator=True)


def remote_handshake_responder(sock: socket.socket, channel_key: bytes) -> SecureFramer:
    hello = _recv_exact(sock, 36)
    if hello[:4] != CHANNEL_MAGIC:
        raise ChannelAuthFailure("peer is not a LURK channel endpoint")
    r_cs = os.urandom(32)
    sock.sendall(CHANNEL_MAGIC + r_cs)
    return SecureFramer(channel_key, hello[4:], r_cs, initiator=False)


# -- engine side ---------------------------------------------------------------------

class Transport(Protocol):
    def exchange(self, frame: bytes) -> bytes: ...

    def close(self) -> None: ...


class InProcessTransport:
    def __init__(self, handler: Callable[[bytes], bytes], tap: Optional[Tap] = None) -> None:
        self._handler = handler
        self.tap = tap

    def exchange(self, frame: bytes) -> bytes:
        if self.tap:
            self.tap("to_cs", frame)
        out = self._handler(frame)
        if self.tap:
            self.tap("from_cs", out)
        return out

    def close(self) -> None:
        pass


class LocalSocketTransport:
    def __init__(self, path: str, tap: Optional[Tap] = None, timeout: float = 10.0) -> None:
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        try:
            self._sock.connect(path)
        except OSError as exc:
            self._sock.close()
            raise ChannelClosed(f"cannot reach crypto service at {path}: {exc}") from None
        self._lock = threading.Lock()
        self.tap = tap

    def exchange(self, frame: bytes) -> bytes:
        with self._lock:
            try:
                if self.tap:
                    self.tap("to_cs", frame)
                self._sock.sendall(frame)
                out = read_plain_frame(self._sock)
            except OSError as exc:
                raise ChannelClosed(str(exc)) from None
            if self.tap:
                self.tap("from_cs", out)
            return out

    def close(self) -> None:
        self._sock.close()


class RemoteTransport:
    def __init__(self, address: tuple[str, int], channel_key: bytes, tap: Optional[Tap] = None,
                 timeout: float = 10.0) -> None:
        try:
            self._sock = socket.create_connection(address, timeout=timeout)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self.framer = remote_handshake_initiator(self._sock, channel_key)
        except OSError as exc:
            raise ChannelClosed(f"cannot reach crypto service at {address}: {exc}") from None
        self._lock = threading.Lock()
        self.tap = tap

    def send_raw(self, data: bytes) -> None:
        self._sock.sendall(data)

    def exchange(self, frame: bytes) -> bytes:
        with self._lock:
            try:
                sealed = self.framer.seal(frame)
                if self.tap:
                    self.tap("to_cs", sealed)
                self._sock.sendall(sealed)
                record = read_sealed_record(self._sock)
            except OSError as exc:
                raise ChannelClosed(str(exc)) from None
            if self.tap:
                self.tap("from_cs", record)
            return self.framer.open(record)

    def close(self) -> None:
        self._sock.close()


def connect(cfg: ChannelConfig, handler: Optional[Callable[[bytes], bytes]] = None,
            tap: Optional[Tap] = None) -> Transport:
    if cfg.mode is ChannelMode.IN_PROCESS:
        if handler is None:
            raise ValueError("in-process channel needs a crypto service")
        return InProcessTransport(handler, tap)
    if cfg.mode is ChannelMode.LOCAL_SOCKET:
        return LocalSocketTransport(str(cfg.address), tap)
    return RemoteTransport(cfg.address, cfg.channel_key, tap)


class LurkClient:
    """Encodes requests onto a transport and decodes the replies."""

    def __init__(self, transport: Transport) -> None:
        self.transport = transport

    def request(self, msg: LurkMessage) -> LurkMessage:
        return decode_lurk(self.transport.exchange(encode_lurk(msg)))

    def close(self) -> None:
        self.transport.close()


# -- crypto service side -----------------------------------------------------------

class ChannelStats:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.counts: dict[str, int] = {}

    def bump(self, name: str) -> None:
        with self._lock:
            self.counts[name] = self.counts.get(name, 0) + 1

    def get(self, name: str) -> int:
        return self.counts.get(name, 0)


def _make_handler(frame_handler: Callable[[bytes], bytes], stats: ChannelStats,
                  channel_key: Optional[bytes]):
    class Handler(socketserver.BaseRequestHandler):
        def handle(self) -> None:
            sock: socket.socket = self.request
            try:
                if channel_key is None:
                    while True:
                        reply = frame_handler(read_plain_frame(sock))
                        stats.bump("frames")
                        sock.sendall(reply)
                else:
                    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    framer = remote_handshake_responder(sock, channel_key)
                    while True:
                        reply = frame_handler(framer.open(read_sealed_record(sock)))
                        stats.bump("frames")
                        sock.sendall(framer.seal(reply))
            except ChannelClosed:
                pass
            except SequenceViolation as exc:
                stats.bump("sequence_violations")
                log.warning("closing channel: %s", exc)
            except ChannelAuthFailure as exc:
                stats.bump("auth_failures")
                log.warning("closing channel: %s", exc)
            except (OSError, ValueError) as exc:
                stats.bump("errors")
                log.warning("closing channel: %s", exc)

    return Handler


class _ThreadingUnixServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True


class _ThreadingTCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class CsServer:
    """Socket front-end for a crypto service (unix or sealed TCP)."""

    def __init__(self, frame_handler: Callable[[bytes], bytes], cfg: ChannelConfig) -> None:
        self.stats = ChannelStats()
        self.cfg = cfg
        if cfg.mode is ChannelMode.LOCAL_SOCKET:
            path = str(cfg.address)
            if os.path.exists(path):
                os.unlink(path)
            self._server = _ThreadingUnixServer(path, _make_handler(frame_handler, self.stats, None))
        elif cfg.mode is ChannelMode.REMOTE:
            self._server = _ThreadingTCPServer(tuple(cfg.address),
                                               _make_handler(frame_handler, self.stats, cfg.channel_key))
        else:
            raise ValueError("in-process channels have no server")
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str | tuple[str, int]:
        return self._server.server_address

    def channel_config(self) -> ChannelConfig:
        if self.cfg.mode is ChannelMode.REMOTE:
            return ChannelConfig(ChannelMode.REMOTE, self.address[:2], self.cfg.channel_key)
        return self.cfg

    def start(self) -> CsServer:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self.cfg.mode is ChannelMode.LOCAL_SOCKET and os.path.exists(str(self.cfg.address)):
            os.unlink(str(self.cfg.address))

    def __enter__(self) -> CsServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
