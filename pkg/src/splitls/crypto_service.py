"""The crypto service (CS): the only holder of the signing key, PSKs and CS-side ephemerals.

The CS accepts LURK request frames and nothing else. Each handshake is a
session whose permitted request sequence is fixed by the configuration row;
any request outside that sequence is refused. Every request that carries a
transcript containing a ServerHello must also carry the engine nonce N_E
whose image under ``phi`` is the ServerHello.random.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import struct
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from cryptography.hazmat.primitives.asymmetric import ed25519
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import codec, kex
from .codec import CertificateVerify, Finished, HandshakeType as HT
from .config import CsConfig, Mode, plan_exchanges
from .events import EventKind, EventLog, emit
from .freshness import verify_freshness
from .identity import SigningIdentity, certificate_public_key, certificate_verify_input, verify as verify_signature
from .key_schedule import (KeySchedule, SharedKeyMaterial, binder_key_and_mac, finished_mac,
                           psk_from_resumption, suite_params, transcript_digest)
from .lurk import (NO_SESSION, BadClientFinished, CacheExpired, ConfigViolation, ErrorCode,
                   FreshnessViolation, LurkDecodeError, LurkError, LurkMessage, LurkType, Malformed,
                   MissingKeyShare, OutOfOrder, ReplayDetected, StoreFull, TranscriptMismatch,
                   UnknownPskId, UnknownSession, UnsupportedGroup, UnsupportedScheme, decode_lurk,
                   encode_lurk, new_session_id, u16)

log = logging.getLogger("splitls.cs")

TICKET_NONCE = b"\x00\x00"
_MEASURED_SOURCES = ("codec.py", "config.py", "crypto_service.py", "freshness.py", "identity.py",
                     "kex.py", "key_schedule.py", "lurk.py")


def _measure() -> bytes:
    h = hashlib.sha256(b"splitls-cs-measurement")
    root = Path(__file__).parent
    for name in _MEASURED_SOURCES:
        data = (root / name).read_bytes()
        h.update(name.encode() + b"\x00" + len(data).to_bytes(8, "big") + data)
    return h.digest()


MEASUREMENT = _measure()


def _wipe(buf: Optional[bytearray]) -> None:
    if buf is not None:
        buf[:] = bytes(len(buf))


def _u16_field(data: bytes, what: str) -> int:
    if len(data) != 2:
        raise Malformed(f"{what} must be a 2-byte value")
    return int.from_bytes(data, "big")


# -- PSK store -----------------------------------------------------------------

@dataclass
class PskEntry:
    psk: bytearray = field(repr=False)
    suite: int
    created_at: float

    def pack(self, psk_id: bytes) -> bytes:
        """Compact serialized form; its length is the per-ticket storage cost."""
        return psk_id + struct.pack("!Hd", self.suite, self.created_at) + bytes(self.psk)


class PskStore:
    """Bounded psk_id -> PSK map with oldest-first eviction."""

    def __init__(self, capacity: int = 100_000, lifetime: float = 7200.0,
                 clock: Callable[[], float] = time.monotonic) -> None:
        self.capacity = capacity
        self.lifetime = lifetime
        self._clock = clock
        self._entries: OrderedDict[bytes, PskEntry] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, psk_id: bytes, psk: bytes, suite: int) -> None:
        if self.capacity <= 0:
            raise StoreFull("PSK store has no capacity")
        with self._lock:
            while len(self._entries) >= self.capacity:
                _, old = self._entries.popitem(last=False)
                _wipe(old.psk)
            self._entries[bytes(psk_id)] = PskEntry(bytearray(psk), suite, self._clock())

    def get(self, psk_id: bytes) -> Optional[PskEntry]:
        with self._lock:
            entry = self._entries.get(bytes(psk_id))
            if entry is None:
                return None
            if self._clock() - entry.created_at > self.lifetime:
                del self._entries[bytes(psk_id)]
                _wipe(entry.psk)
                return None
            return PskEntry(bytearray(entry.psk), entry.suite, entry.created_at)

    def evict(self, psk_id: bytes) -> bool:
        with self._lock:
            entry = self._entries.pop(bytes(psk_id), None)
        if entry is not None:
            _wipe(entry.psk)
        return entry is not None

    def entry_footprint(self, psk_id: bytes) -> int:
        with self._lock:
            return len(self._entries[bytes(psk_id)].pack(bytes(psk_id)))

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, psk_id: bytes) -> bool:
        return bytes(psk_id) in self._entries


# -- attestation ----------------------------------------------------------------

@dataclass
class CachedSession:
    config: CsConfig
    suite: int
    group: Optional[int]
    v: Optional[bytearray] = field(repr=False)
    ke: Optional[bytearray] = field(repr=False)
    psk: Optional[bytearray] = field(repr=False)
    h_ctx: bytes = field(repr=False)
    created_at: float = 0.0

    def zeroize(self) -> None:
        for buf in (self.v, self.ke, self.psk):
            _wipe(buf)


class AttestationCache:
    """Per-session key material and H_ctx retained for a bounded window (LRU)."""

    def __init__(self, window: float = 60.0, capacity: int = 1024,
                 clock: Callable[[], float] = time.monotonic) -> None:
        self.window = window
        self.capacity = capacity
        self._clock = clock
        self._entries: OrderedDict[bytes, CachedSession] = OrderedDict()
        self._retired: OrderedDict[bytes, None] = OrderedDict()
        self._lock = threading.Lock()

    def _retire(self, sid: bytes, entry: CachedSession) -> None:
        entry.zeroize()
        self._retired[sid] = None
        while len(self._retired) > 16 * max(self.capacity, 1):
            self._retired.popitem(last=False)

    def _expire(self) -> None:
        now = self._clock()
        while self._entries:
            sid, entry = next(iter(self._entries.items()))
            if now - entry.created_at <= self.window and len(self._entries) <= self.capacity:
                break
            del self._entries[sid]
            self._retire(sid, entry)

    def put(self, sid: bytes, entry: CachedSession) -> None:
        if self.capacity <= 0:
            entry.zeroize()
            return
        with self._lock:
            entry.created_at = self._clock()
            self._entries[sid] = entry
            self._expire()

    def get(self, sid: bytes) -> CachedSession:
        with self._lock:
            self._expire()
            entry = self._entries.get(sid)
            if entry is not None:
                return entry
            if sid in self._retired:
                raise CacheExpired("session left the attestation window")
            raise UnknownSession("no attested session with this id")

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class Quote:
    session_id: bytes
    measurement: bytes
    h_ctx_hash: bytes
    signature: bytes

    def signed_bytes(self) -> bytes:
        return self.measurement + self.h_ctx_hash

    def to_json(self) -> str:
        return json.dumps({"session_id": self.session_id.hex(), "measurement": self.measurement.hex(),
                           "h_ctx_hash": self.h_ctx_hash.hex(), "signature": self.signature.hex()},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> Quote:
        d = json.loads(text)
        return cls(*(bytes.fromhex(d[k]) for k in ("session_id", "measurement", "h_ctx_hash", "signature")))


def verify_quote(quote: Quote, expected_h_ctx_hash: bytes, attest_public_key: ed25519.Ed25519PublicKey,
                 allowed_measurements: Optional[set[bytes]] = None) -> bool:
    allowed = {MEASUREMENT} if allowed_measurements is None else allowed_measurements
    if quote.measurement not in allowed:
        return False
    if not hmac.compare_digest(quote.h_ctx_hash, expected_h_ctx_hash):
        return False
    try:
        attest_public_key.verify(quote.signature, quote.signed_bytes())
    except Exception:
        return False
    return True


@dataclass(frozen=True)
class Recomputation:
    psign: bytes
    h_c: bytes
    h_s: bytes
    a_c: bytes
    a_s: bytes


# -- sessions ---------------------------------------------------------------------

@dataclass
class SessionRecord:
    session_id: bytes
    config: CsConfig
    plan: list[LurkType]
    step: int = 0
    group: Optional[int] = None
    v: Optional[bytearray] = field(default=None, repr=False)
    ke_s: Optional[bytes] = None
    ke: Optional[bytearray] = field(default=None, repr=False)
    psk: Optional[bytearray] = field(default=None, repr=False)
    suite: Optional[int] = None
    truncated_ch: Optional[bytes] = None
    schedule: Optional[KeySchedule] = None
    transcript: bytes = b""
    n_s: Optional[bytes] = None
    last: Optional[tuple[int, bytes, bytes]] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def hash_name(self) -> str:
        return suite_params(self.suite).hash_name

    def zeroize(self) -> None:
        for buf in (self.v, self.ke, self.psk):
            _wipe(buf)
        if self.schedule is not None:
            self.schedule.zeroize()
        self.last = None


def _parse(transcript: bytes, kinds: list[HT]) -> list[tuple[bytes, object]]:
    try:
        msgs = codec.parse_transcript(transcript)
        if [k for k, _ in msgs] != kinds:
            raise TranscriptMismatch(
                f"transcript holds {[k.name for k, _ in msgs]}, expected {[k.name for k in kinds]}")
        return [(raw, codec.decode_message(raw)) for _, raw in msgs]
    except codec.DecodeError as exc:
        raise Malformed(f"transcript: {exc}") from None


class CryptoService:
    """Serves LURK requests for one signing identity and one cert row plus one PSK row."""

    def __init__(self, identity: SigningIdentity,
                 cert_config: Optional[CsConfig | str] = "cs_cert_dhe_r",
                 psk_config: Optional[CsConfig | str] = None, *,
                 psk_store: Optional[PskStore] = None,
                 attestation: Optional[AttestationCache] = None,
                 attest_key: Optional[ed25519.Ed25519PrivateKey] = None,
                 keygen: kex.KeyGen = kex.generate_keypair,
                 event_log: Optional[EventLog] = None,
                 max_sessions: int = 65536,
                 replay_window: int = 1 << 20,
                 freshness_bypass: bool = False) -> None:
        self._identity = identity
        self.cert_config = CsConfig.from_name(cert_config) if isinstance(cert_config, str) else cert_config
        self.psk_config = CsConfig.from_name(psk_config) if isinstance(psk_config, str) else psk_config
        if self.cert_config is not None and self.cert_config.mode is not Mode.CERT:
            raise ValueError(f"{self.cert_config.name} is not a certificate row")
        if self.psk_config is not None and self.psk_config.mode is not Mode.PSK:
            raise ValueError(f"{self.psk_config.name} is not a PSK row")
        self.psk_store = psk_store if psk_store is not None else PskStore()
        self.attestation = attestation if attestation is not None else AttestationCache()
        self._attest_key = attest_key or ed25519.Ed25519PrivateKey.generate()
        self._keygen = keygen
        self.event_log = event_log
        self.max_sessions = max_sessions
        self.replay_window = replay_window
        self.freshness_bypass = freshness_bypass
        self._sessions: OrderedDict[bytes, SessionRecord] = OrderedDict()
        self._seen_randoms: OrderedDict[bytes, None] = OrderedDict()
        self._lock = threading.Lock()
        self.requests_served = 0
        self._handlers = {
            LurkType.GET_ECDHE: self._get_ecdhe,
            LurkType.GET_HANDSHAKE_SECRETS: self._get_handshake_secrets,
            LurkType.GET_SIG_AND_APP: self._get_sig_and_app,
            LurkType.NEW_TICKET: self._issue_ticket,
            LurkType.EARLY_SECRET: self._early_secret,
            LurkType.GET_APP_SECRET: self._get_app_secret,
            LurkType.GET_RES_SECRET: self._issue_ticket,
        }

    # public, non-secret properties

    @property
    def cert_chain(self) -> list[bytes]:
        return list(self._identity.cert_chain)

    @property
    def signature_scheme(self) -> int:
        return self._identity.scheme

    @property
    def attest_public_key(self) -> ed25519.Ed25519PublicKey:
        return self._attest_key.public_key()

    def attest_public_bytes(self) -> bytes:
        return self.attest_public_key.public_bytes(Encoding.Raw, PublicFormat.Raw)

    def live_sessions(self) -> int:
        return len(self._sessions)

    # frame entry points

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg = decode_lurk(frame)
        except LurkDecodeError as exc:
            sid = bytes(frame[2:10]) if len(frame) >= 10 else NO_SESSION
            return encode_lurk(LurkMessage.error(sid, ErrorCode.MALFORMED, str(exc)))
        return encode_lurk(self.handle(msg))

    def handle(self, msg: LurkMessage) -> LurkMessage:
        self.requests_served += 1
        sid = msg.session_id
        try:
            if msg.is_error or msg.is_response:
                raise Malformed("the crypto service only accepts requests")
            rtype = LurkType(msg.msg_type)
            fields = msg.fields()
            if rtype is LurkType.ATTEST:
                quote = self.attest(sid)
                return LurkMessage.response(rtype, sid, measurement=quote.measurement,
                                            h_ctx_hash=quote.h_ctx_hash, signature=quote.signature)
            return self._dispatch(rtype, msg, fields)
        except LurkError as exc:
            log.info("reject %s session=%s: %s", ErrorCode(exc.code).name, sid.hex(), exc)
            return LurkMessage.error(sid, exc.code, str(exc))
        except Exception:
            log.exception("internal error on session %s", sid.hex())
            return LurkMessage.error(sid, ErrorCode.INTERNAL, "internal error")

    def _dispatch(self, rtype: LurkType, msg: LurkMessage, fields: dict[str, bytes]) -> LurkMessage:
        if msg.session_id == NO_SESSION:
            rec = self._open_session(rtype)
            is_new = True
        else:
            with self._lock:
                rec = self._sessions.get(msg.session_id)
            if rec is None:
                raise UnknownSession("unknown or completed session")
            is_new = False
        with rec.lock:
            if rec.last is not None and rec.last[0] == rtype and hmac.compare_digest(rec.last[1], msg.payload):
                return LurkMessage(0x80 | rtype, rec.session_id, rec.last[2])
            if rec.step >= len(rec.plan) or rec.plan[rec.step] != rtype:
                self._drop(rec)
                if rtype not in rec.plan:
                    raise ConfigViolation(f"{rtype.name} is not served under {rec.config.name}")
                raise OutOfOrder(f"{rtype.name} arrived at step {rec.step} of {rec.config.name}")
            try:
                out = self._handlers[rtype](rec, fields)
            except LurkError:
                self._drop(rec)
                raise
            except (ValueError, codec.DecodeError) as exc:
                self._drop(rec)
                raise Malformed(str(exc)) from None
            response = LurkMessage.response(rtype, rec.session_id, **out)
            rec.step += 1
            rec.last = (rtype, msg.payload, response.payload)
            if rec.step == len(rec.plan):
                self._complete(rec)
            elif is_new:
                self._register(rec)
            log.debug("served %s session=%s step=%d/%d", rtype.name, rec.session_id.hex(),
                      rec.step, len(rec.plan))
            return response

    def _open_session(self, rtype: LurkType) -> SessionRecord:
        if rtype is LurkType.EARLY_SECRET:
            if self.psk_config is None:
                raise ConfigViolation("PSK resumption is not configured")
            cfg = self.psk_config
        else:
            cfg = self.cert_config
            if cfg is None:
                raise ConfigViolation("certificate handshakes are not configured")
            plan = plan_exchanges(cfg)
            if rtype != plan[0]:
                if rtype in plan:
                    raise UnknownSession(f"{rtype.name} needs an established session")
                raise ConfigViolation(f"{rtype.name} is not served under {cfg.name}")
        return SessionRecord(new_session_id(), cfg, plan_exchanges(cfg))

    def _register(self, rec: SessionRecord) -> None:
        with self._lock:
            self._sessions[rec.session_id] = rec
            while len(self._sessions) > self.max_sessions:
                _, old = self._sessions.popitem(last=False)
                old.zeroize()

    def _drop(self, rec: SessionRecord) -> None:
        with self._lock:
            self._sessions.pop(rec.session_id, None)
        rec.zeroize()

    def _complete(self, rec: SessionRecord) -> None:
        with self._lock:
            self._sessions.pop(rec.session_id, None)
        copy = lambda b: bytearray(b) if b is not None else None
        self.attestation.put(rec.session_id, CachedSession(
            rec.config, rec.suite, rec.group, copy(rec.v), copy(rec.ke), copy(rec.psk), rec.transcript))
        rec.zeroize()

    # checks shared by the transcript-consuming handlers

    def _check_freshness(self, n_e: bytes, n_s: bytes) -> None:
        if self.freshness_bypass:
            return
        if len(n_e) != 32 or not verify_freshness(n_e, n_s):
            raise FreshnessViolation("ServerHello.random is not phi(N_E)")

    def _bind_random(self, rec: SessionRecord, n_s: bytes) -> None:
        if rec.n_s is not None:
            if rec.n_s != n_s:
                raise TranscriptMismatch("ServerHello.random changed within the session")
            return
        with self._lock:
            if n_s in self._seen_randoms:
                raise ReplayDetected("ServerHello.random already used by another session")
            self._seen_randoms[n_s] = None
            while len(self._seen_randoms) > self.replay_window:
                self._seen_randoms.popitem(last=False)
        rec.n_s = n_s

    def _extension(self, rec: SessionRecord, transcript: bytes, kinds: list[HT]) -> list[tuple[bytes, object]]:
        """Check ``transcript`` = session transcript + messages of ``kinds``."""
        if not transcript.startswith(rec.transcript) or len(transcript) == len(rec.transcript):
            raise TranscriptMismatch("transcript does not extend the session transcript")
        return _parse(transcript[len(rec.transcript):], kinds)

    # handlers

    def _get_ecdhe(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        group = _u16_field(f["group"], "group")
        if group not in kex.SUPPORTED_GROUPS:
            raise UnsupportedGroup(f"group 0x{group:04x} not supported")
        rec.v, rec.ke_s = self._keygen(group)
        rec.group = group
        return {"ke_s": rec.ke_s}

    def _get_handshake_secrets(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        transcript = f["transcript"]
        (ch_raw, ch), (_, sh) = _parse(transcript, [HT.CLIENT_HELLO, HT.SERVER_HELLO])
        self._check_freshness(f["n_e"], sh.random)
        if rec.truncated_ch is not None and codec.truncate_client_hello(ch_raw) != rec.truncated_ch:
            raise TranscriptMismatch("ClientHello differs from the one the binder covered")
        if sh.selected_version != codec.TLS13 or sh.cipher_suite not in ch.cipher_suites:
            raise TranscriptMismatch("ServerHello does not select TLS 1.3 with an offered suite")
        suite_params(sh.cipher_suite)
        if sh.key_share is None:
            raise MissingKeyShare("ServerHello carries no key share")
        group, server_share = sh.key_share
        if rec.config.mode is Mode.PSK:
            if sh.selected_psk != 0:
                raise TranscriptMismatch("ServerHello does not select the offered PSK")
            if suite_params(sh.cipher_suite).hash_name != rec.hash_name:
                raise TranscriptMismatch("suite hash differs from the PSK's")
        self._bind_random(rec, sh.random)
        if rec.config.cs_generates_ecdhe:
            if group != rec.group or server_share != rec.ke_s:
                raise TranscriptMismatch("ServerHello key share is not the one the CS generated")
            client_share = dict(ch.key_shares).get(group)
            if client_share is None:
                raise MissingKeyShare("ClientHello has no share for the selected group")
            try:
                ke = kex.shared_secret(group, rec.v, client_share)
            except kex.BadKeyShare as exc:
                raise MissingKeyShare(str(exc)) from None
        else:
            ke = f["ke_shared"]
            if not ke:
                raise MissingKeyShare("E-side (EC)DHE configuration needs ke_shared")
            rec.group = group
        rec.suite = sh.cipher_suite
        rec.ke = bytearray(ke)
        rec.schedule = KeySchedule(codec.CipherSuite(rec.suite))
        psk = bytes(rec.psk) if rec.psk is not None else None
        h_c, h_s = rec.schedule.derive_handshake_secrets(SharedKeyMaterial(ke, psk), transcript)
        rec.transcript = transcript
        return {"h_c": h_c, "h_s": h_s}

    def _get_sig_and_app(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        transcript = f["transcript"]
        if rec.config.keyless:
            msgs = _parse(transcript, [HT.CLIENT_HELLO, HT.SERVER_HELLO, HT.ENCRYPTED_EXTENSIONS,
                                       HT.CERTIFICATE])
            ch, sh, cert = msgs[0][1], msgs[1][1], msgs[3][1]
            if sh.cipher_suite not in ch.cipher_suites:
                raise TranscriptMismatch("ServerHello selects a suite the client did not offer")
            suite_params(sh.cipher_suite)
            rec.suite = sh.cipher_suite
        else:
            ch, sh = (codec.decode_message(raw) for _, raw in codec.parse_transcript(rec.transcript))
            _, cert = self._extension(rec, transcript, [HT.ENCRYPTED_EXTENSIONS, HT.CERTIFICATE])[1]
        self._check_freshness(f["n_e"], sh.random)
        self._bind_random(rec, sh.random)
        if not cert.entries or cert.entries[0].cert_data != self._identity.cert_chain[0]:
            raise TranscriptMismatch("Certificate message does not carry the CS certificate")
        scheme = _u16_field(f["sig_scheme"], "sig_scheme")
        if scheme != self._identity.scheme or scheme not in ch.signature_algorithms:
            raise UnsupportedScheme(f"cannot sign with scheme 0x{scheme:04x}")
        hn = rec.hash_name
        psign = self._identity.sign(certificate_verify_input(transcript_digest(transcript, hn)))
        cv_msg = codec.encode_message(CertificateVerify(scheme, psign))
        emit(self.event_log, EventKind.CS_SENT_CV, rec.session_id.hex(), ch.random, sh.random,
             hashlib.sha256(transcript).digest())
        out = {"psign": psign, "cv_msg": cv_msg}
        full = transcript + cv_msg
        if rec.config.cs_generates_application:
            fin_e = finished_mac(bytes(rec.schedule.secrets.h_s), full, hn)
            full += codec.encode_message(Finished(fin_e))
            a_c, a_s = rec.schedule.derive_application_secrets(full)
            out.update(fin_e=fin_e, a_c=a_c, a_s=a_s)
            if rec.config.cs_generates_resumption and not rec.config.cs_generates_ecdhe:
                # No NEW_TICKET exchange in this row: the client Finished is
                # fully determined here, so the ticket PSK is derived now.
                fin_c = finished_mac(bytes(rec.schedule.secrets.h_c), full, hn)
                r = rec.schedule.derive_resumption_secret(full + codec.encode_message(Finished(fin_c)))
                self.psk_store.put(rec.session_id, psk_from_resumption(r, TICKET_NONCE, hn), rec.suite)
                out.update(psk_id=rec.session_id, ticket_nonce=TICKET_NONCE)
        rec.transcript = full
        return out

    def _issue_ticket(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        transcript = f["transcript"]
        (_, fin), = self._extension(rec, transcript, [HT.FINISHED])
        self._check_freshness(f["n_e"], rec.n_s)
        hn = rec.hash_name
        expected = finished_mac(bytes(rec.schedule.secrets.h_c), rec.transcript, hn)
        if not hmac.compare_digest(expected, fin.verify_data):
            raise BadClientFinished("client Finished does not verify")
        r = rec.schedule.derive_resumption_secret(transcript)
        self.psk_store.put(rec.session_id, psk_from_resumption(r, f["ticket_nonce"], hn), rec.suite)
        rec.transcript = transcript
        return {"psk_id": rec.session_id}

    def _early_secret(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        truncated = f["truncated_ch"]
        if len(truncated) < 4 or truncated[0] != HT.CLIENT_HELLO:
            raise Malformed("truncated ClientHello expected")
        entry = self.psk_store.get(f["psk_id"])
        if entry is None:
            raise UnknownPskId("no PSK under this identity")
        rec.psk, rec.suite, rec.truncated_ch = entry.psk, entry.suite, truncated
        bk, mac = binder_key_and_mac(bytes(entry.psk), truncated, rec.hash_name)
        return {"binder_key": bk, "binder_mac": mac, "suite": u16(entry.suite)}

    def _get_app_secret(self, rec: SessionRecord, f: dict[str, bytes]) -> dict[str, bytes]:
        transcript = f["transcript"]
        (ee_raw, _), (_, fin) = self._extension(rec, transcript, [HT.ENCRYPTED_EXTENSIONS, HT.FINISHED])
        self._check_freshness(f["n_e"], rec.n_s)
        expected = finished_mac(bytes(rec.schedule.secrets.h_s), rec.transcript + ee_raw, rec.hash_name)
        if not hmac.compare_digest(expected, fin.verify_data):
            raise TranscriptMismatch("server Finished does not match the handshake secrets")
        a_c, a_s = rec.schedule.derive_application_secrets(transcript)
        rec.transcript = transcript
        return {"a_c": a_c, "a_s": a_s}

    # attestation and accountability

    def attest(self, session_id: bytes) -> Quote:
        if session_id == NO_SESSION:
            raise UnknownSession("ATTEST needs a session id")
        entry = self.attestation.get(session_id)
        h = hashlib.sha256(entry.h_ctx).digest()
        return Quote(session_id, MEASUREMENT, h, self._attest_key.sign(MEASUREMENT + h))

    def recompute(self, session_id: bytes, h_ctx: bytes) -> Recomputation:
        """Re-derive psign and traffic secrets of a cached session from its H_ctx alone."""
        entry = self.attestation.get(session_id)
        msgs = codec.parse_transcript(h_ctx)
        kinds = [k for k, _ in msgs]
        if kinds[:2] != [HT.CLIENT_HELLO, HT.SERVER_HELLO]:
            raise TranscriptMismatch("H_ctx must start with ClientHello, ServerHello")

        def upto(kind: HT) -> bytes:
            i = kinds.index(kind)
            return b"".join(raw for _, raw in msgs[:i + 1])

        ch = codec.decode_message(msgs[0][1])
        schedule = KeySchedule(codec.CipherSuite(entry.suite))
        psign = b""
        if entry.config.mode is Mode.CERT:
            th = transcript_digest(upto(HT.CERTIFICATE), schedule.hash_name)
            psign = self._identity.sign(certificate_verify_input(th))
        if entry.config.keyless:
            # the engine ran the key schedule; only the signature is the CS's to reproduce
            return Recomputation(psign, b"", b"", b"", b"")
        if entry.v is not None:
            client_share = dict(ch.key_shares).get(entry.group)
            if client_share is None:
                raise MissingKeyShare("H_ctx ClientHello lacks the session's key share")
            ke = kex.shared_secret(entry.group, entry.v, client_share)
        elif entry.ke is not None:
            ke = bytes(entry.ke)
        else:
            raise ConfigViolation("no key material cached for this session")
        psk = bytes(entry.psk) if entry.psk is not None else None
        h_c, h_s = schedule.derive_handshake_secrets(SharedKeyMaterial(ke, psk), upto(HT.SERVER_HELLO))
        a_c = a_s = b""
        if HT.FINISHED in kinds:
            a_c, a_s = schedule.derive_application_secrets(upto(HT.FINISHED))
        schedule.zeroize()
        return Recomputation(psign, h_c, h_s, a_c, a_s)


def verify_psign(cert_der: bytes, scheme: int, psign: bytes, transcript: bytes, hash_name: str = "sha256") -> bool:
    data = certificate_verify_input(transcript_digest(transcript, hash_name))
    return verify_signature(certificate_public_key(cert_der), scheme, psign, data)
