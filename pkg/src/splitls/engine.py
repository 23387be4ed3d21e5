"""The TLS engine (E): terminates TLS 1.3 toward clients and delegates to the crypto service.

``EngineSession`` is sans-IO: feed it bytes from the client with ``receive``
and write back whatever it returns. All CS exchanges for a flight run before
the flight is returned, so a failed exchange never leaves a partial flight
on the wire.

An ``Engine`` built with ``local_identity`` instead of a CS channel is the
monolithic baseline: same handshake, every secret and the signature computed
in-process, no LURK frames.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import os
import secrets as _secrets
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from . import codec, kex
from .channel import ChannelError, LurkClient
from .codec import (PSK_DHE_KE, Certificate, CertificateEntry, CertificateVerify, ClientHello,
                    EncryptedExtensions, Finished, HandshakeTranscript, HandshakeType as HT,
                    NewSessionTicket, ServerHello)
from .config import CsConfig, Mode, plan_exchanges
from .events import EventKind, EventLog, emit
from .freshness import EngineNonce
from .identity import SigningIdentity, certificate_public_key, certificate_verify_input, scheme_for_key
from .key_schedule import (KeySchedule, SecretBundle, SharedKeyMaterial, binder_key_and_mac, finished_mac,
                           psk_from_resumption, suite_params, transcript_digest)
from .lurk import (NO_SESSION, ErrorCode, LurkDecodeError, LurkError, LurkMessage, LurkType, u16)
from .record import (ContentType, RecordBuffer, TrafficKeys, derive_traffic_keys, plaintext_record,
                     seal_fragmented)

log = logging.getLogger("splitls.engine")

DEFAULT_SUITES = (codec.CipherSuite.AES_128_GCM_SHA256, codec.CipherSuite.AES_256_GCM_SHA384,
                  codec.CipherSuite.CHACHA20_POLY1305_SHA256)
TICKET_LIFETIME = 7200
TICKET_NONCE = b"\x00\x00"


class EngineError(Exception):
    pass


class NegotiationFailure(EngineError):
    pass


class CsUnavailable(EngineError):
    pass


class CsRejected(EngineError):
    def __init__(self, error: LurkError) -> None:
        super().__init__(f"crypto service rejected the request: {ErrorCode(error.code).name}: {error}")
        self.code = error.code
        self.error = error


class BadClientFinished(EngineError):
    pass


class BadBinder(EngineError):
    pass


class ProtocolViolation(EngineError):
    pass


class State(Enum):
    AWAIT_CH = "AwaitCH"
    SENT_FLIGHT = "SentFlight"
    AWAIT_FIN = "AwaitFin"
    DONE = "Done"
    FAILED = "Failed"


def default_app(request: bytes) -> bytes:
    """``GET <n>`` streams n bytes back; anything else is echoed."""
    if request.startswith(b"GET "):
        try:
            n = int(request[4:].strip())
        except ValueError:
            return request
        return bytes(n) if n >= 0 else b""
    return request


@dataclass
class Engine:
    """Shared per-server state: CS channel, certificate and configuration rows."""

    cert_chain: list[bytes]
    cs: Optional[LurkClient] = None
    cert_config: Optional[CsConfig] = None
    psk_config: Optional[CsConfig] = None
    local_identity: Optional[SigningIdentity] = None
    local_resumption: bool = True
    suites: tuple[int, ...] = DEFAULT_SUITES
    groups: tuple[int, ...] = kex.SUPPORTED_GROUPS
    event_log: Optional[EventLog] = None
    keygen: kex.KeyGen = kex.generate_keypair
    app: Callable[[bytes], bytes] = default_app
    _local_psks: dict[bytes, tuple[bytearray, int]] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if isinstance(self.cert_config, str):
            self.cert_config = CsConfig.from_name(self.cert_config)
        if isinstance(self.psk_config, str):
            self.psk_config = CsConfig.from_name(self.psk_config)
        if self.cs is None and self.local_identity is None:
            raise ValueError("an engine needs a crypto service channel or a local identity")
        if self.cert_config is not None and self.cert_config.mode is not Mode.CERT:
            raise ValueError(f"{self.cert_config.name} is not a certificate row")
        if self.psk_config is not None and self.psk_config.mode is not Mode.PSK:
            raise ValueError(f"{self.psk_config.name} is not a PSK row")
        self.signature_scheme = scheme_for_key(certificate_public_key(self.cert_chain[0]))

    @property
    def monolithic(self) -> bool:
        return self.local_identity is not None

    def session(self) -> EngineSession:
        return EngineSession(self)

    def _store_local_psk(self, psk: bytes, suite: int) -> bytes:
        psk_id = os.urandom(8)
        with self._lock:
            self._local_psks[psk_id] = (bytearray(psk), suite)
        return psk_id

    def _local_psk(self, psk_id: bytes) -> Optional[tuple[bytearray, int]]:
        with self._lock:
            return self._local_psks.get(bytes(psk_id))


class EngineSession:
    """One client connection."""

    def __init__(self, engine: Engine) -> None:
        self.engine = engine
        self.state = State.AWAIT_CH
        self.completed = False
        self.transcript = HandshakeTranscript()
        self.n_e: Optional[EngineNonce] = None
        self.config: Optional[CsConfig] = None
        self.resumed = False
        self.psk_rejected = False
        self.v: Optional[bytearray] = None
        self.secrets = SecretBundle()
        self.cs_session_id: Optional[bytes] = None
        self.exchanges: list[LurkType] = []
        self.suite: Optional[int] = None
        self.tag = _secrets.token_hex(6)
        self._records = RecordBuffer()
        self._hs_buffer = b""
        self._client_hs: Optional[TrafficKeys] = None
        self._client_app: Optional[TrafficKeys] = None
        self._server_app: Optional[TrafficKeys] = None
        self._expected_fin_c = b""
        self._schedule: Optional[KeySchedule] = None
        self._precomputed_ticket: Optional[tuple[bytes, bytes]] = None
        self._ticket_issued: Optional[bytes] = None

    # -- public API

    def receive(self, data: bytes) -> bytes:
        if self.state is State.FAILED:
            raise ProtocolViolation("session already failed")
        self._records.feed(data)
        out = []
        try:
            for rec in self._records:
                out.append(self._on_record(rec))
        except Exception:
            self._fail()
            raise
        return b"".join(out)

    def send_application(self, data: bytes) -> bytes:
        if self.state is not State.DONE:
            raise ProtocolViolation("handshake not complete")
        return seal_fragmented(self._server_app, data, ContentType.APPLICATION_DATA)

    def close(self) -> None:
        """Connection gone: a handshake still in flight counts as failed."""
        if self.state not in (State.DONE, State.FAILED):
            self._fail()

    def nonce_erased(self) -> bool:
        """True when no N_E was ever sampled or the sampled one has been wiped."""
        return self.n_e is None or self.n_e.is_erased()

    # -- record dispatch

    def _on_record(self, rec: bytes) -> bytes:
        ctype = rec[0]
        if ctype == ContentType.CHANGE_CIPHER_SPEC and rec[5:] == b"\x01":
            return b""
        if self.state is State.AWAIT_CH:
            if ctype != ContentType.HANDSHAKE:
                raise ProtocolViolation(f"expected a handshake record, got type {ctype}")
            self._hs_buffer += rec[5:]
            msgs, self._hs_buffer = codec.split_messages(self._hs_buffer)
            if not msgs:
                return b""
            if len(msgs) != 1 or self._hs_buffer or msgs[0][0] != HT.CLIENT_HELLO:
                raise ProtocolViolation("expected exactly one ClientHello")
            return self._handle_client_hello(msgs[0])
        if self.state is State.AWAIT_FIN:
            body, inner = self._client_hs.open(rec)
            if inner != ContentType.HANDSHAKE:
                raise ProtocolViolation("expected the client Finished")
            self._hs_buffer += body
            msgs, self._hs_buffer = codec.split_messages(self._hs_buffer)
            if not msgs:
                return b""
            if len(msgs) != 1 or self._hs_buffer or msgs[0][0] != HT.FINISHED:
                raise ProtocolViolation("expected exactly one client Finished")
            return self._handle_client_finished(msgs[0])
        if self.state is State.DONE:
            body, inner = self._client_app.open(rec)
            if inner == ContentType.ALERT:
                return b""
            if inner != ContentType.APPLICATION_DATA:
                raise ProtocolViolation("unexpected post-handshake message")
            return self.send_application(self.engine.app(body))
        raise ProtocolViolation(f"no records expected in state {self.state.value}")

    # -- CS plumbing

    def _cs(self, rtype: LurkType, **fields: bytes) -> dict[str, bytes]:
        msg = LurkMessage.request(rtype, self.cs_session_id or NO_SESSION, **fields)
        self.exchanges.append(rtype)
        try:
            resp = self.engine.cs.request(msg)
        except (ChannelError, OSError) as exc:
            raise CsUnavailable(f"crypto service unreachable: {exc}") from None
        except LurkDecodeError as exc:
            raise CsRejected(LurkError(f"undecodable reply: {exc}")) from None
        if resp.is_error:
            try:
                resp.raise_for_error()
            except LurkError as err:
                raise CsRejected(err) from None
        if resp.msg_type != 0x80 | rtype:
            raise CsRejected(LurkError(f"reply type {resp.msg_type} does not answer {rtype.name}"))
        if self.cs_session_id is None:
            self.cs_session_id = resp.session_id
        elif resp.session_id != self.cs_session_id:
            raise CsRejected(LurkError("reply for a different session"))
        try:
            return resp.fields()
        except LurkError as err:
            raise CsRejected(err) from None

    def _n_e(self) -> bytes:
        return self.n_e.value

    # -- negotiation helpers

    def _select_suite(self, ch: ClientHello, hash_name: Optional[str] = None) -> Optional[int]:
        for s in ch.cipher_suites:
            if s in self.engine.suites and (hash_name is None or suite_params(s).hash_name == hash_name):
                return s
        return None

    def _select_share(self, ch: ClientHello) -> tuple[int, bytes]:
        for group, share in ch.key_shares:
            if group in self.engine.groups:
                return group, share
        raise NegotiationFailure("no key share on a supported group (HelloRetryRequest unsupported)")

    def _key_exchange(self, cfg: Optional[CsConfig], group: int, client_share: bytes) -> tuple[bytes, Optional[bytes]]:
        """Returns (KE_S, E-side shared secret or None when the CS holds v)."""
        if cfg is not None and cfg.cs_generates_ecdhe:
            return self._cs(LurkType.GET_ECDHE, group=u16(group))["ke_s"], None
        self.v, ke_s = self.engine.keygen(group)
        try:
            return ke_s, kex.shared_secret(group, self.v, client_share)
        except kex.BadKeyShare as exc:
            raise NegotiationFailure(str(exc)) from None

    def _server_hello(self, ch: ClientHello, suite: int, group: int, ke_s: bytes, psk: bool) -> bytes:
        exts = [codec.build_supported_versions_server(), codec.build_key_share_server(group, ke_s)]
        if psk:
            exts.append(codec.build_pre_shared_key_server(0))
        sh = ServerHello(self.n_e.server_random(), suite, exts, ch.legacy_session_id)
        return codec.encode_message(sh)

    def _handshake_secrets(self, cfg: Optional[CsConfig], ke: Optional[bytes], psk: Optional[bytes]) -> None:
        th = self.transcript.to_bytes()
        if cfg is None or not cfg.cs_generates_handshake:
            self._schedule = KeySchedule(codec.CipherSuite(self.suite))
            h_c, h_s = self._schedule.derive_handshake_secrets(SharedKeyMaterial(ke, psk), th)
        else:
            out = self._cs(LurkType.GET_HANDSHAKE_SECRETS, transcript=th, n_e=self._n_e(), ke_shared=ke or b"")
            h_c, h_s = out["h_c"], out["h_s"]
        p = suite_params(self.suite)
        if len(h_c) != p.hash_len or len(h_s) != p.hash_len:
            raise CsRejected(LurkError("handshake secrets of the wrong length"))
        self.secrets.h_c, self.secrets.h_s = bytearray(h_c), bytearray(h_s)

    def _finish_flight(self, sh_raw: bytes, encrypted: list[bytes]) -> bytes:
        hn = suite_params(self.suite).hash_name
        server_hs = derive_traffic_keys(bytes(self.secrets.h_s), self.suite)
        self._client_hs = derive_traffic_keys(bytes(self.secrets.h_c), self.suite)
        self._expected_fin_c = finished_mac(bytes(self.secrets.h_c), self.transcript.to_bytes(), hn)
        self._server_app = derive_traffic_keys(bytes(self.secrets.a_s), self.suite)
        self._client_app = derive_traffic_keys(bytes(self.secrets.a_c), self.suite)
        flight = plaintext_record(ContentType.HANDSHAKE, sh_raw)
        flight += seal_fragmented(server_hs, b"".join(encrypted), ContentType.HANDSHAKE)
        server_hs.zeroize()
        self.state = State.AWAIT_FIN
        return flight

    def _app_secrets(self, cfg: Optional[CsConfig], from_cs: Optional[dict[str, bytes]] = None) -> None:
        if cfg is None or not cfg.cs_generates_application:
            a_c, a_s = self._schedule.derive_application_secrets(self.transcript.to_bytes())
        elif from_cs is not None:
            a_c, a_s = from_cs["a_c"], from_cs["a_s"]
        else:
            out = self._cs(LurkType.GET_APP_SECRET, transcript=self.transcript.to_bytes(), n_e=self._n_e())
            a_c, a_s = out["a_c"], out["a_s"]
        if len(a_c) != suite_params(self.suite).hash_len or len(a_s) != len(a_c):
            raise CsRejected(LurkError("application secrets missing or malformed"))
        self.secrets.a_c, self.secrets.a_s = bytearray(a_c), bytearray(a_s)

    # -- ClientHello

    def _handle_client_hello(self, raw: bytes) -> bytes:
        try:
            ch = codec.decode_message(raw)
        except codec.DecodeError as exc:
            raise ProtocolViolation(f"bad ClientHello: {exc}") from None
        if codec.TLS13 not in ch.supported_versions:
            raise NegotiationFailure("client does not offer TLS 1.3")
        self.transcript.append(raw)
        offered = ch.offered_psks
        if offered is not None and PSK_DHE_KE in ch.psk_modes and (
                self.engine.psk_config is not None or (self.engine.monolithic and self.engine.local_resumption)):
            flight = self._try_resumption(raw, ch)
            if flight is not None:
                return flight
            self.psk_rejected = True
        return self._full_handshake(ch)

    def _full_handshake(self, ch: ClientHello) -> bytes:
        eng = self.engine
        cfg = None if eng.monolithic else eng.cert_config
        if not eng.monolithic and cfg is None:
            raise NegotiationFailure("certificate handshakes are not configured")
        self.config = cfg
        self.suite = self._select_suite(ch)
        if self.suite is None:
            raise NegotiationFailure("no mutually supported cipher suite")
        if eng.signature_scheme not in ch.signature_algorithms:
            raise NegotiationFailure("client does not accept the certificate's signature scheme")
        group, client_share = self._select_share(ch)
        hn = suite_params(self.suite).hash_name
        self.n_e = EngineNonce()
        ke_s, ke = self._key_exchange(cfg, group, client_share)
        sh_raw = self._server_hello(ch, self.suite, group, ke_s, psk=False)
        self.transcript.append(sh_raw)
        n_c, n_s = ch.random, self.n_e.server_random()
        self._handshake_secrets(cfg, ke, None)

        ee = codec.encode_message(EncryptedExtensions([]))
        cert = codec.encode_message(Certificate([CertificateEntry(c) for c in eng.cert_chain]))
        self.transcript.append(ee)
        self.transcript.append(cert)
        th = self.transcript.to_bytes()
        sig_out = None
        if eng.monolithic:
            psign = eng.local_identity.sign(certificate_verify_input(transcript_digest(th, hn)))
            cv = codec.encode_message(CertificateVerify(eng.signature_scheme, psign))
        else:
            prefix_hash = hashlib.sha256(th).digest()
            emit(eng.event_log, EventKind.E_SENT_CR_SR_TO_CS, self.tag, n_c, n_s, prefix_hash)
            sig_out = self._cs(LurkType.GET_SIG_AND_APP, transcript=th, n_e=self._n_e(),
                               sig_scheme=u16(eng.signature_scheme))
            cv = sig_out["cv_msg"]
            try:
                cv_msg = codec.decode_message(cv)
            except codec.DecodeError:
                cv_msg = None
            if not isinstance(cv_msg, CertificateVerify) or cv_msg.algorithm != eng.signature_scheme:
                raise CsRejected(LurkError("crypto service returned no usable CertificateVerify"))
            emit(eng.event_log, EventKind.E_RECVD_CV, self.tag, n_c, n_s, prefix_hash)
        self.transcript.append(cv)
        fin_e = finished_mac(bytes(self.secrets.h_s), self.transcript.to_bytes(), hn)
        if sig_out is not None and cfg.cs_generates_application and not hmac.compare_digest(sig_out["fin_e"], fin_e):
            raise CsRejected(LurkError("server Finished from the crypto service does not match"))
        fin = codec.encode_message(Finished(fin_e))
        self.transcript.append(fin)
        self._app_secrets(cfg, sig_out)
        if sig_out is not None and sig_out["psk_id"]:
            self._precomputed_ticket = (sig_out["psk_id"], sig_out["ticket_nonce"])
        if not eng.monolithic:
            emit(eng.event_log, EventKind.E_PRE_SERVER_FINISHED, self.tag, n_c, n_s, prefix_hash)
        log.debug("session %s: full handshake flight ready (%s)", self.tag, cfg.name if cfg else "baseline")
        return self._finish_flight(sh_raw, [ee, cert, cv, fin])

    # -- resumption

    def _try_resumption(self, raw: bytes, ch: ClientHello) -> Optional[bytes]:
        eng = self.engine
        offered = ch.offered_psks
        psk_id, binder = offered.identities[0][0], offered.binders[0]
        truncated = codec.truncate_client_hello(raw)
        cfg = None if eng.monolithic else eng.psk_config
        if eng.monolithic:
            entry = eng._local_psk(psk_id)
            if entry is None:
                return None
            psk, psk_suite = bytes(entry[0]), entry[1]
            _, mac = binder_key_and_mac(psk, truncated, suite_params(psk_suite).hash_name)
        else:
            psk = None
            try:
                out = self._cs(LurkType.EARLY_SECRET, psk_id=psk_id, truncated_ch=truncated)
            except CsRejected as exc:
                if exc.code != ErrorCode.UNKNOWN_PSK_ID:
                    raise
                self.exchanges.clear()
                self.cs_session_id = None
                return None
            mac, psk_suite = out["binder_mac"], int.from_bytes(out["suite"], "big")
        if not hmac.compare_digest(mac, binder):
            raise BadBinder("PSK binder does not verify")
        self.suite = self._select_suite(ch, suite_params(psk_suite).hash_name)
        if self.suite is None:
            raise NegotiationFailure("no offered suite matches the PSK hash")
        self.config = cfg
        self.resumed = True
        group, client_share = self._select_share(ch)
        self.n_e = EngineNonce()
        ke_s, ke = self._key_exchange(cfg, group, client_share)
        sh_raw = self._server_hello(ch, self.suite, group, ke_s, psk=True)
        self.transcript.append(sh_raw)
        self._handshake_secrets(cfg, ke, psk)
        ee = codec.encode_message(EncryptedExtensions([]))
        self.transcript.append(ee)
        fin_e = finished_mac(bytes(self.secrets.h_s), self.transcript.to_bytes(), suite_params(self.suite).hash_name)
        fin = codec.encode_message(Finished(fin_e))
        self.transcript.append(fin)
        self._app_secrets(cfg)
        log.debug("session %s: resumption flight ready (%s)", self.tag, cfg.name if cfg else "baseline")
        return self._finish_flight(sh_raw, [ee, fin])

    # -- client Finished

    def _handle_client_finished(self, raw: bytes) -> bytes:
        fin = codec.decode_message(raw)
        if not hmac.compare_digest(fin.verify_data, self._expected_fin_c):
            raise BadClientFinished("client Finished does not verify")
        self.transcript.append(raw)
        ticket = self._issue_ticket()
        out = b""
        if ticket is not None:
            psk_id, nonce = ticket
            nst = NewSessionTicket(TICKET_LIFETIME, int.from_bytes(os.urandom(4), "big"), nonce, psk_id)
            self._ticket_issued = psk_id
            out = self._server_app.seal(codec.encode_message(nst), ContentType.HANDSHAKE)
        self.state = State.DONE
        self.completed = True
        self._wipe_ephemerals()
        log.debug("session %s: done (%d CS exchanges)", self.tag, len(self.exchanges))
        return out

    def _issue_ticket(self) -> Optional[tuple[bytes, bytes]]:
        eng, cfg = self.engine, self.config
        th = self.transcript.to_bytes()
        if eng.monolithic:
            if not eng.local_resumption:
                return None
            r = self._schedule.derive_resumption_secret(th)
            hn = suite_params(self.suite).hash_name
            psk_id = eng._store_local_psk(psk_from_resumption(r, TICKET_NONCE, hn), self.suite)
            return psk_id, TICKET_NONCE
        if not cfg.cs_generates_resumption:
            return None
        if self._precomputed_ticket is not None:
            return self._precomputed_ticket
        rtype = LurkType.NEW_TICKET if cfg.mode is Mode.CERT else LurkType.GET_RES_SECRET
        out = self._cs(rtype, transcript=th, n_e=self._n_e(), ticket_nonce=TICKET_NONCE)
        if len(out["psk_id"]) != 8:
            raise CsRejected(LurkError("psk_id must be 8 bytes"))
        return out["psk_id"], TICKET_NONCE

    # -- hygiene

    def _wipe_ephemerals(self) -> None:
        if self.n_e is not None:
            self.n_e.erase()
        if self.v is not None:
            self.v[:] = bytes(len(self.v))
        if self._schedule is not None and self.state is State.FAILED:
            self._schedule.zeroize()
        if self._client_hs is not None:
            self._client_hs.zeroize()

    def _fail(self) -> None:
        self.state = State.FAILED
        self._wipe_ephemerals()
        for keys in (self._client_app, self._server_app):
            if keys is not None:
                keys.zeroize()

    def planned(self) -> list[LurkType]:
        return plan_exchanges(self.config, self.resumed) if self.config is not None else []


# -- TCP front-end ------------------------------------------------------------------

class _EngineHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        server: EngineServer = self.server.owner
        sess = server.engine.session()
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                out = sess.receive(data)
                if out:
                    sock.sendall(out)
        except Exception as exc:
            log.info("connection aborted: %s: %s", type(exc).__name__, exc)
        finally:
            sess.close()
            server._finished(sess)


class _TCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class EngineServer:
    """Serves ``engine`` on a TCP endpoint; optionally stops after N connections."""

    def __init__(self, engine: Engine, address: tuple[str, int], max_connections: Optional[int] = None,
                 on_session: Optional[Callable[[EngineSession], None]] = None) -> None:
        self.engine = engine
        self.on_session = on_session
        self._server = _TCPServer(address, _EngineHandler)
        self._server.owner = self
        self.max_connections = max_connections
        self.completed: list[EngineSession] = []
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def _finished(self, sess: EngineSession) -> None:
        if self.on_session is not None:
            try:
                self.on_session(sess)
            except Exception:
                log.exception("session hook failed")
        with self._lock:
            self.completed.append(sess)
            done = self.max_connections is not None and len(self.completed) >= self.max_connections
        if done:
            threading.Thread(target=self._server.shutdown, daemon=True).start()

    def start(self) -> EngineServer:
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def wait(self, timeout: Optional[float] = None) -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        while self._thread is not None and self._thread.is_alive():
            self._thread.join(0.05 if deadline is None else max(0.0, min(0.05, deadline - time.monotonic())))
            if deadline is not None and time.monotonic() >= deadline:
                break

    def __enter__(self) -> EngineServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
