"""A minimal TLS 1.3 client used to drive the engine in tests, benchmarks and the CLI."""

from __future__ import annotations

import hashlib
import hmac
import os
import socket
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import codec, kex
from .codec import (PSK_DHE_KE, Certificate, CertificateVerify, ClientHello, Finished, HandshakeTranscript,
                    HandshakeType as HT, NewSessionTicket, ServerHello, SignatureScheme)
from .events import EventKind, EventLog, emit
from .identity import certificate_public_key, certificate_verify_input, verify as verify_signature
from .key_schedule import (KeySchedule, SharedKeyMaterial, binder_key_and_mac, finished_mac, psk_from_resumption,
                           suite_params, transcript_digest)
from .record import (ContentType, RecordBuffer, TrafficKeys, derive_traffic_keys, plaintext_record,
                     seal_fragmented)

ALL_SCHEMES = (SignatureScheme.ED25519, SignatureScheme.ED448, SignatureScheme.ECDSA_SECP256R1_SHA256,
               SignatureScheme.ECDSA_SECP384R1_SHA384)


class ClientError(Exception):
    pass


class NegotiationFailure(ClientError):
    pass


class BadServerSignature(ClientError):
    pass


class BadServerFinished(ClientError):
    pass


class ServerRejectedPsk(ClientError):
    pass


class ConnectionFailed(ClientError):
    pass


class ClientState(Enum):
    START = "Start"
    AWAIT_SH = "AwaitSH"
    AWAIT_FLIGHT = "AwaitFlight"
    DONE = "Done"
    FAILED = "Failed"


@dataclass
class Ticket:
    ticket: bytes
    psk: bytes = field(repr=False)
    suite: int
    lifetime: int
    age_add: int
    received_at: float

    def obfuscated_age(self) -> int:
        age_ms = int((time.monotonic() - self.received_at) * 1000)
        return (age_ms + self.age_add) % (1 << 32)


class ClientConnection:
    """Sans-IO client: ``start()`` yields the ClientHello record, ``receive`` the replies."""

    def __init__(self, trust_anchor: Optional[bytes] = None, group: int = codec.Group.X25519,
                 suites: tuple[int, ...] = (codec.CipherSuite.AES_128_GCM_SHA256,),
                 ticket: Optional[Ticket] = None, server_name: Optional[str] = "localhost",
                 event_log: Optional[EventLog] = None, strict_psk: bool = False) -> None:
        self.trust_anchor = trust_anchor
        self.group = group
        self.suites = tuple(suites)
        self.ticket = ticket
        self.server_name = server_name
        self.event_log = event_log
        self.strict_psk = strict_psk
        self.state = ClientState.START
        self.completed = False
        self.transcript = HandshakeTranscript()
        self.tickets: list[Ticket] = []
        self.app_data = bytearray()
        self.resumed = False
        self.psk_rejected = False
        self.a_c: Optional[bytes] = None
        self.a_s: Optional[bytes] = None
        self.h_s: Optional[bytes] = None
        self.server_random: Optional[bytes] = None
        self.server_share: Optional[bytes] = None
        self.server_cert: Optional[bytes] = None
        self.flight_kinds: list[HT] = []
        self._u: Optional[bytearray] = None
        self._records = RecordBuffer()
        self._hs_buffer = b""
        self._schedule: Optional[KeySchedule] = None
        self._server_hs: Optional[TrafficKeys] = None
        self._server_app: Optional[TrafficKeys] = None
        self._client_app: Optional[TrafficKeys] = None
        self._r: Optional[bytes] = None
        self._suite: Optional[int] = None
        self._cert_prefix_hash: Optional[bytes] = None

    @property
    def suite(self) -> Optional[int]:
        return self._suite

    # -- ClientHello

    def _client_hello(self) -> bytes:
        self._u, ke_c = kex.generate_keypair(self.group)
        suites = list(self.suites)
        if self.ticket is not None and self.ticket.suite in suites:
            suites.remove(self.ticket.suite)
            suites.insert(0, self.ticket.suite)
        elif self.ticket is not None:
            suites.insert(0, self.ticket.suite)
        exts = []
        if self.server_name:
            exts.append(codec.build_server_name(self.server_name.encode()))
        exts += [codec.build_supported_versions_client([codec.TLS13]),
                 codec.build_supported_groups([self.group]),
                 codec.build_signature_algorithms(list(ALL_SCHEMES)),
                 codec.build_key_share_client([(self.group, ke_c)])]
        ch = ClientHello(os.urandom(32), suites, exts, legacy_session_id=os.urandom(32))
        if self.ticket is None:
            return codec.encode_message(ch)
        ch.extensions.append(codec.build_psk_modes([PSK_DHE_KE]))
        hn = suite_params(self.ticket.suite).hash_name
        identities = [(self.ticket.ticket, self.ticket.obfuscated_age())]
        ch.extensions.append(codec.build_pre_shared_key_client(identities, [bytes(suite_params(self.ticket.suite).hash_len)]))
        truncated = codec.truncate_client_hello(codec.encode_message(ch))
        _, binder = binder_key_and_mac(self.ticket.psk, truncated, hn)
        ch.extensions[-1] = codec.build_pre_shared_key_client(identities, [binder])
        return codec.encode_message(ch)

    def start(self) -> bytes:
        if self.state is not ClientState.START:
            raise ClientError("start() called twice")
        raw = self._client_hello()
        self.transcript.append(raw)
        self.client_random = raw[6:38]
        self.state = ClientState.AWAIT_SH
        return plaintext_record(ContentType.HANDSHAKE, raw, legacy_version=0x0301)

    # -- records

    def receive(self, data: bytes) -> bytes:
        if self.state is ClientState.FAILED:
            raise ClientError("connection already failed")
        self._records.feed(data)
        out = []
        try:
            for rec in self._records:
                out.append(self._on_record(rec))
        except Exception:
            self.state = ClientState.FAILED
            if self._u is not None:
                self._u[:] = bytes(len(self._u))
            raise
        return b"".join(out)

    def send_application(self, data: bytes) -> bytes:
        if self.state is not ClientState.DONE:
            raise ClientError("handshake not complete")
        return seal_fragmented(self._client_app, data, ContentType.APPLICATION_DATA)

    def _on_record(self, rec: bytes) -> bytes:
        ctype = rec[0]
        if ctype == ContentType.CHANGE_CIPHER_SPEC:
            return b""
        if ctype == ContentType.ALERT:
            raise ConnectionFailed(f"server sent alert {rec[5:].hex()}")
        if self.state is ClientState.AWAIT_SH:
            if ctype != ContentType.HANDSHAKE:
                raise ClientError("expected ServerHello")
            msgs, rest = codec.split_messages(rec[5:])
            if len(msgs) != 1 or rest:
                raise ClientError("expected exactly one ServerHello in the first record")
            self._handle_server_hello(msgs[0])
            return b""
        if self.state is ClientState.AWAIT_FLIGHT:
            body, inner = self._server_hs.open(rec)
            if inner != ContentType.HANDSHAKE:
                raise ClientError("expected handshake messages")
            self._hs_buffer += body
            msgs, self._hs_buffer = codec.split_messages(self._hs_buffer)
            out = b""
            for m in msgs:
                out += self._handle_flight_message(m)
            return out
        if self.state is ClientState.DONE:
            body, inner = self._server_app.open(rec)
            if inner == ContentType.HANDSHAKE:
                msgs, rest = codec.split_messages(body)
                for m in msgs:
                    self._handle_post_handshake(m)
            elif inner == ContentType.APPLICATION_DATA:
                self.app_data += body
            return b""
        raise ClientError(f"unexpected record in state {self.state.value}")

    def _handle_server_hello(self, raw: bytes) -> None:
        sh = codec.decode_message(raw)
        if not isinstance(sh, ServerHello):
            raise ClientError("expected ServerHello")
        if sh.selected_version != codec.TLS13:
            raise NegotiationFailure("server did not select TLS 1.3")
        if sh.cipher_suite not in self.suites and not (self.ticket and sh.cipher_suite == self.ticket.suite):
            raise NegotiationFailure("server selected a suite that was not offered")
        share = sh.key_share
        if share is None or share[0] != self.group:
            raise NegotiationFailure("server key share is on a group the client did not request")
        psk = None
        if sh.selected_psk is not None:
            if self.ticket is None or sh.selected_psk != 0:
                raise NegotiationFailure("server selected a PSK that was not offered")
            if suite_params(sh.cipher_suite).hash_name != suite_params(self.ticket.suite).hash_name:
                raise NegotiationFailure("server suite does not match the PSK hash")
            psk = self.ticket.psk
            self.resumed = True
        elif self.ticket is not None:
            self.psk_rejected = True
            if self.strict_psk:
                raise ServerRejectedPsk("server declined the offered ticket")
        try:
            ke = kex.shared_secret(self.group, self._u, share[1])
        except kex.BadKeyShare as exc:
            raise NegotiationFailure(str(exc)) from None
        self._u[:] = bytes(len(self._u))
        self._suite = sh.cipher_suite
        self.server_random = sh.random
        self.server_share = share[1]
        self.transcript.append(raw)
        self._schedule = KeySchedule(codec.CipherSuite(sh.cipher_suite))
        h_c, h_s = self._schedule.derive_handshake_secrets(SharedKeyMaterial(ke, psk), self.transcript.to_bytes())
        self._h_c, self.h_s = h_c, h_s
        self._server_hs = derive_traffic_keys(h_s, self._suite)
        self.state = ClientState.AWAIT_FLIGHT

    def _handle_flight_message(self, raw: bytes) -> bytes:
        kind = HT(raw[0]) if raw[0] in HT._value2member_map_ else None
        expected = [HT.ENCRYPTED_EXTENSIONS, HT.FINISHED] if self.resumed else \
            [HT.ENCRYPTED_EXTENSIONS, HT.CERTIFICATE, HT.CERTIFICATE_VERIFY, HT.FINISHED]
        if len(self.flight_kinds) >= len(expected) or kind != expected[len(self.flight_kinds)]:
            raise ClientError(f"unexpected {kind.name if kind else raw[0]} in server flight")
        msg = codec.decode_message(raw)
        hn = suite_params(self._suite).hash_name
        self.flight_kinds.append(kind)
        if kind is HT.CERTIFICATE:
            assert isinstance(msg, Certificate)
            if not msg.entries:
                raise BadServerSignature("empty certificate chain")
            leaf = msg.entries[0].cert_data
            if self.trust_anchor is not None and leaf != self.trust_anchor:
                raise BadServerSignature("server certificate is not the trust anchor")
            self.server_cert = leaf
            self.transcript.append(raw)
            self._cert_prefix_hash = hashlib.sha256(self.transcript.to_bytes()).digest()
            return b""
        if kind is HT.CERTIFICATE_VERIFY:
            assert isinstance(msg, CertificateVerify)
            data = certificate_verify_input(transcript_digest(self.transcript.to_bytes(), hn))
            try:
                pub = certificate_public_key(self.server_cert)
            except ValueError:
                raise BadServerSignature("unparseable server certificate") from None
            if not verify_signature(pub, msg.algorithm, msg.signature, data):
                raise BadServerSignature("CertificateVerify does not verify")
            self.transcript.append(raw)
            return b""
        if kind is HT.FINISHED:
            assert isinstance(msg, Finished)
            expected_mac = finished_mac(self.h_s, self.transcript.to_bytes(), hn)
            if not hmac.compare_digest(expected_mac, msg.verify_data):
                raise BadServerFinished("server Finished does not verify")
            self.transcript.append(raw)
            th = self.transcript.to_bytes()
            self.a_c, self.a_s = self._schedule.derive_application_secrets(th)
            fin_c = codec.encode_message(Finished(finished_mac(self._h_c, th, hn)))
            client_hs = derive_traffic_keys(self._h_c, self._suite)
            out = client_hs.seal(fin_c, ContentType.HANDSHAKE)
            if not self.resumed:
                emit(self.event_log, EventKind.C_CLIENT_FINISHED, "client", self.client_random,
                     self.server_random, self._cert_prefix_hash)
            self.transcript.append(fin_c)
            self._r = self._schedule.derive_resumption_secret(self.transcript.to_bytes())
            self._server_app = derive_traffic_keys(self.a_s, self._suite)
            self._client_app = derive_traffic_keys(self.a_c, self._suite)
            self.state = ClientState.DONE
            self.completed = True
            return out
        self.transcript.append(raw)
        return b""

    def _handle_post_handshake(self, raw: bytes) -> None:
        msg = codec.decode_message(raw)
        if not isinstance(msg, NewSessionTicket):
            raise ClientError("unexpected post-handshake message")
        hn = suite_params(self._suite).hash_name
        self.tickets.append(Ticket(msg.ticket, psk_from_resumption(self._r, msg.nonce, hn), self._suite,
                                   msg.lifetime, msg.age_add, time.monotonic()))

    @property
    def ticket_received(self) -> Optional[Ticket]:
        return self.tickets[-1] if self.tickets else None


# -- blocking socket helpers ----------------------------------------------------------

def _pump_until(sock: socket.socket, conn: ClientConnection, done) -> None:
    while not done():
        data = sock.recv(65536)
        if not data:
            raise ConnectionFailed(f"server closed the connection (client state {conn.state.value})")
        out = conn.receive(data)
        if out:
            sock.sendall(out)


def client_connect(endpoint: tuple[str, int], trust_anchor: Optional[bytes] = None,
                   group: int = codec.Group.X25519,
                   suite: int = codec.CipherSuite.AES_128_GCM_SHA256,
                   ticket: Optional[Ticket] = None, timeout: float = 10.0,
                   wait_for_ticket: float = 0.2) -> tuple[ClientConnection, socket.socket]:
    """Complete a handshake over TCP; returns the connection and its open socket."""
    conn = ClientConnection(trust_anchor, group, (suite,), ticket)
    sock = socket.create_connection(endpoint, timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.sendall(conn.start())
        _pump_until(sock, conn, lambda: conn.state is ClientState.DONE)
        if wait_for_ticket > 0 and not conn.tickets:
            sock.settimeout(wait_for_ticket)
            try:
                data = sock.recv(65536)
                if data:
                    conn.receive(data)
            except socket.timeout:
                pass
            finally:
                sock.settimeout(timeout)
    except Exception:
        sock.close()
        raise
    return conn, sock


def client_resume(endpoint: tuple[str, int], ticket: Ticket, trust_anchor: Optional[bytes] = None,
                  group: int = codec.Group.X25519, timeout: float = 10.0) -> tuple[ClientConnection, socket.socket]:
    return client_connect(endpoint, trust_anchor, group, ticket.suite, ticket, timeout)


def request(sock: socket.socket, conn: ClientConnection, payload: bytes, expect: int) -> bytes:
    """Send application data and read until ``expect`` bytes have arrived."""
    start = len(conn.app_data)
    sock.sendall(conn.send_application(payload))
    if expect == 0:
        time.sleep(0)
    _pump_until(sock, conn, lambda: len(conn.app_data) - start >= expect)
    return bytes(conn.app_data[start:start + expect])
