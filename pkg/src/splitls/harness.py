"""Adversarial and statistical batteries run against an engine and crypto service.

Everything here drives sans-IO sessions in one process so a run is cheap and
its event log has a single writer. ``build_stack`` also starts socket-backed
crypto services for the unix and tcp channel modes.
"""

from __future__ import annotations

import hashlib
import inspect
import io
import logging
import os
import random
import shutil
import tempfile
import threading
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from . import codec, kex
from .channel import (ChannelClosed, ChannelConfig, ChannelMode, CsServer, LurkClient, RemoteTransport,
                      connect, read_sealed_record)
from .client import ClientConnection, ClientState
from .codec import ServerHello
from .config import CERT_ROWS, CsConfig, Mode
from .crypto_service import CryptoService
from .engine import Engine, EngineSession, State
from .events import CHAIN, Event, EventKind, EventLog
from .freshness import phi
from .identity import SigningIdentity, private_scalar_bytes
from .lurk import (NO_SESSION, ErrorCode, LurkDecodeError, LurkError, LurkMessage, LurkType, decode_lurk,
                   encode_lurk, u16)

log = logging.getLogger("splitls.harness")


def format_tsv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(c) for c in row) for row in rows]
    return "\n".join(lines) + "\n"


# -- stacks ----------------------------------------------------------------------------

@dataclass
class SplitStack:
    """A crypto service, its channel and an engine wired to it."""

    identity: SigningIdentity
    cs: CryptoService
    engine: Engine
    channel: ChannelMode
    server: Optional[CsServer] = None
    lurk: Optional[LurkClient] = None
    _tmpdir: Optional[str] = None

    def close(self) -> None:
        if self.lurk is not None:
            self.lurk.close()
        if self.server is not None:
            self.server.stop()
        if self._tmpdir is not None:
            shutil.rmtree(self._tmpdir, ignore_errors=True)

    def __enter__(self) -> SplitStack:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_stack(cert_config: Optional[str | CsConfig] = "cs_cert_dhe_r",
                psk_config: Optional[str | CsConfig] = "cs_psk_dhe_r", *,
                identity: Optional[SigningIdentity] = None, channel: str | ChannelMode = "inprocess",
                event_log: Optional[EventLog] = None, cs_factory: Callable[..., CryptoService] = CryptoService,
                cs_kwargs: Optional[dict] = None, engine_kwargs: Optional[dict] = None,
                tap=None) -> SplitStack:
    identity = identity or SigningIdentity.generate()
    cs = cs_factory(identity, cert_config, psk_config, event_log=event_log, **(cs_kwargs or {}))
    mode = channel if isinstance(channel, ChannelMode) else ChannelMode(channel)
    server, tmpdir = None, None
    if mode is ChannelMode.IN_PROCESS:
        cfg = ChannelConfig(mode)
    elif mode is ChannelMode.LOCAL_SOCKET:
        tmpdir = tempfile.mkdtemp(prefix="splitls-")
        server = CsServer(cs.handle_frame, ChannelConfig(mode, os.path.join(tmpdir, "cs.sock"))).start()
        cfg = server.channel_config()
    else:
        server = CsServer(cs.handle_frame, ChannelConfig(mode, ("127.0.0.1", 0), os.urandom(32))).start()
        cfg = server.channel_config()
    lurk = LurkClient(connect(cfg, cs.handle_frame, tap))
    engine = Engine(identity.cert_chain, lurk, cert_config, psk_config, event_log=event_log,
                    **(engine_kwargs or {}))
    return SplitStack(identity, cs, engine, mode, server, lurk, tmpdir)


def build_baseline(identity: Optional[SigningIdentity] = None, resumption: bool = True, **kw) -> Engine:
    """The monolithic server: same engine code, credentials held locally."""
    identity = identity or SigningIdentity.generate()
    return Engine(identity.cert_chain, local_identity=identity, local_resumption=resumption, **kw)


def run_handshake(client: ClientConnection, session: EngineSession, max_rounds: int = 8) -> ClientConnection:
    """Drive a client and an engine session to completion with no adversary."""
    out = client.start()
    for _ in range(max_rounds):
        back = session.receive(out)
        if not back:
            break
        out = client.receive(back)
        if not out:
            break
    return client


def request_app(client: ClientConnection, session: EngineSession, payload: bytes) -> bytes:
    start = len(client.app_data)
    client.receive(session.receive(client.send_application(payload)))
    return bytes(client.app_data[start:])


# -- agreement ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    ok: bool
    checked: int
    violation: Optional[str] = None
    pair: Optional[tuple[int, int]] = None


_E_KINDS = (EventKind.E_SENT_CR_SR_TO_CS, EventKind.E_RECVD_CV, EventKind.E_PRE_SERVER_FINISHED)


def check_agreement(log_or_events: EventLog | Iterable[Event]) -> Verdict:
    """Match every client-finished event to its own chain of predecessors.

    The chain is sent_cr_sr -> CS_sent_CV -> recvd_CV -> pre_server_finished ->
    client_finished, all agreeing on (N_C, N_S, transcript hash), in log order,
    with the three engine events sharing one session tag. No event may serve
    two client-finished events.
    """
    events = log_or_events.events if isinstance(log_or_events, EventLog) else list(log_or_events)
    index: dict[tuple[EventKind, tuple], list[Event]] = defaultdict(list)
    for ev in events:
        index[(ev.kind, ev.key())].append(ev)
    owner: dict[int, int] = {}
    checked = 0
    for cf in (e for e in events if e.kind is EventKind.C_CLIENT_FINISHED):
        chain = [cf]
        engine_tag = None
        for kind in reversed(CHAIN[:-1]):
            cands = [e for e in index[(kind, cf.key())] if e.index < chain[-1].index
                     and (engine_tag is None or kind not in _E_KINDS or e.tag == engine_tag)]
            free = [e for e in cands if e.index not in owner]
            if not free:
                if cands:
                    dup = cands[-1]
                    return Verdict(False, checked,
                                   f"client_finished #{owner[dup.index]} and #{cf.index} both map to "
                                   f"{kind.value} #{dup.index}", (owner[dup.index], cf.index))
                return Verdict(False, checked, f"client_finished #{cf.index} has no {kind.value} predecessor")
            pick = free[-1]
            if kind is EventKind.E_PRE_SERVER_FINISHED:
                engine_tag = pick.tag
            chain.append(pick)
        for ev in chain[1:]:
            owner[ev.index] = cf.index
        checked += 1
    return Verdict(True, checked)


class Action(Enum):
    PASS = "pass"
    DROP = "drop"
    DUPLICATE = "duplicate"
    REORDER = "reorder"
    BITFLIP = "bitflip"
    REPLAY_OLD = "replay_old"


DEFAULT_WEIGHTS = {Action.PASS: 0.80, Action.DROP: 0.04, Action.DUPLICATE: 0.04, Action.REORDER: 0.04,
                   Action.BITFLIP: 0.04, Action.REPLAY_OLD: 0.04}


@dataclass
class ManglerPolicy:
    """Seeded action source for the client-engine channel."""

    seed: int = 0
    weights: dict[Action, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self) -> None:
        self.rng = random.Random(self.seed)
        self._actions = list(self.weights)
        self._w = [self.weights[a] for a in self._actions]

    def choose(self) -> Action:
        return self.rng.choices(self._actions, self._w)[0]

    def flip(self, data: bytes) -> bytes:
        buf = bytearray(data)
        bit = self.rng.randrange(len(buf) * 8)
        buf[bit // 8] ^= 1 << (bit % 8)
        return bytes(buf)


@dataclass
class _Lane:
    client: ClientConnection
    session: EngineSession
    rogue: bool = False
    to_engine: deque = field(default_factory=deque)
    to_client: deque = field(default_factory=deque)
    client_error: Optional[str] = None
    engine_error: Optional[str] = None


@dataclass
class AgreementReport:
    n: int
    seed: int
    leak_key: bool
    completed: int
    aborted: int
    view_mismatches: int
    actions: Counter
    verdict: Verdict

    @property
    def ok(self) -> bool:
        return self.verdict.ok and self.view_mismatches == 0

    def to_tsv(self) -> str:
        rows = [("handshakes", self.n), ("seed", self.seed), ("leak_key", int(self.leak_key)),
                ("completed", self.completed), ("aborted", self.aborted),
                ("view_mismatches", self.view_mismatches), ("chains_checked", self.verdict.checked),
                ("verdict", "accept" if self.verdict.ok else "reject"),
                ("violation", self.verdict.violation or "-")]
        rows += [(f"action_{a.value}", self.actions.get(a, 0)) for a in Action]
        return format_tsv(("field", "value"), rows)


def run_agreement(n: int = 200, seed: int = 0, leak_key: bool = False,
                  cert_config: str = "cs_cert_dhe_r", policy: Optional[ManglerPolicy] = None,
                  identity: Optional[SigningIdentity] = None) -> AgreementReport:
    """Interleave ``n`` handshakes through a seeded mangler and check the event log.

    With ``leak_key`` the adversary also holds the CS signing key and answers
    every tenth client with its own monolithic server, which must show up as
    an agreement violation.
    """
    policy = policy or ManglerPolicy(seed)
    events = EventLog()
    identity = identity or SigningIdentity.generate()
    stack = build_stack(cert_config, None, identity=identity, event_log=events)
    rogue = build_baseline(identity, resumption=False) if leak_key else None
    anchor = identity.cert_chain[0]
    lanes = []
    for i in range(n):
        use_rogue = rogue is not None and i % 10 == 0
        sess = (rogue if use_rogue else stack.engine).session()
        lane = _Lane(ClientConnection(anchor, event_log=events), sess, use_rogue)
        lane.to_engine.append(lane.client.start())
        lanes.append(lane)
    history: dict[str, list[bytes]] = {"to_engine": [], "to_client": []}
    actions: Counter = Counter()
    rng = policy.rng

    def deliver(lane: _Lane, direction: str, data: bytes) -> None:
        if direction == "to_engine":
            if lane.engine_error or lane.session.state in (State.FAILED,):
                return
            try:
                out = lane.session.receive(data)
            except Exception as exc:
                lane.engine_error = type(exc).__name__
                return
            if out:
                lane.to_client.append(out)
        else:
            if lane.client_error or lane.client.state is ClientState.FAILED:
                return
            try:
                out = lane.client.receive(data)
            except Exception as exc:
                lane.client_error = type(exc).__name__
                return
            if out:
                lane.to_engine.append(out)

    while True:
        pending = [(lane, d) for lane in lanes for d in ("to_engine", "to_client") if getattr(lane, d)]
        if not pending:
            break
        lane, direction = rng.choice(pending)
        queue: deque = getattr(lane, direction)
        msg = queue.popleft()
        action = policy.choose()
        actions[action] += 1
        if action is Action.REORDER:
            # behind the next queued message, or behind whatever other lanes deliver meanwhile
            queue.insert(1, msg)
            continue
        if action is Action.PASS:
            batch = [msg]
        elif action is Action.DROP:
            batch = []
        elif action is Action.DUPLICATE:
            batch = [msg, msg]
        elif action is Action.BITFLIP:
            batch = [policy.flip(msg)]
        else:
            old = history[direction]
            batch = [rng.choice(old), msg] if old else [msg]
        history[direction].append(msg)
        for data in batch:
            deliver(lane, direction, data)

    for lane in lanes:
        lane.session.close()
    completed = sum(1 for lane in lanes if lane.client.completed)
    mismatches = 0
    for lane in lanes:
        if lane.rogue or not lane.client.completed or not lane.session.completed:
            continue
        if lane.client.a_c != bytes(lane.session.secrets.a_c) or lane.client.a_s != bytes(lane.session.secrets.a_s):
            mismatches += 1
    stack.close()
    return AgreementReport(n, policy.seed, leak_key, completed, n - completed, mismatches, actions,
                           check_agreement(events))


# -- replay battery ----------------------------------------------------------------------

REPLAY_CATEGORIES = ("frame_replay", "stale_n_e", "stale_n_s", "random_n_e", "session0_replay",
                     "remote_frame_replay")

_FRESHNESS_BOUND = {LurkType.GET_HANDSHAKE_SECRETS, LurkType.GET_SIG_AND_APP, LurkType.NEW_TICKET,
                    LurkType.GET_APP_SECRET, LurkType.GET_RES_SECRET}


@dataclass
class ReplayReport:
    attempts: Counter = field(default_factory=Counter)
    acceptances: Counter = field(default_factory=Counter)
    outcomes: Counter = field(default_factory=Counter)
    freshness_mismatch_attempts: int = 0
    freshness_mismatch_violations: int = 0
    idempotent_replays: int = 0
    idempotent_mismatches: int = 0
    remote_reached_cs: int = 0

    @property
    def total_attempts(self) -> int:
        return sum(self.attempts.values())

    @property
    def total_acceptances(self) -> int:
        return sum(self.acceptances.values())

    @property
    def ok(self) -> bool:
        return (self.total_acceptances == 0 and self.remote_reached_cs == 0 and self.idempotent_mismatches == 0
                and self.freshness_mismatch_violations == self.freshness_mismatch_attempts)

    def to_tsv(self) -> str:
        rows = [(c, self.attempts[c], self.acceptances[c]) for c in REPLAY_CATEGORIES]
        rows.append(("total", self.total_attempts, self.total_acceptances))
        out = format_tsv(("category", "attempts", "acceptances"), rows)
        extra = [("freshness_mismatch_attempts", self.freshness_mismatch_attempts),
                 ("freshness_violation_errors", self.freshness_mismatch_violations),
                 ("remote_replays_reaching_cs", self.remote_reached_cs),
                 ("idempotent_replays", self.idempotent_replays),
                 ("idempotent_mismatches", self.idempotent_mismatches)]
        extra += [(f"outcome_{k}", v) for k, v in sorted(self.outcomes.items())]
        return out + format_tsv(("field", "value"), extra)


class _Recorder:
    """Transport wrapper that keeps every request frame and re-sends signature requests once.

    The re-send is only meaningful where GET_SIG_AND_APP is not the last step
    of the plan; after the last step the session has left the live table.
    """

    def __init__(self, inner, report: ReplayReport, resend_sig: bool = True) -> None:
        self.inner = inner
        self.report = report
        self.resend_sig = resend_sig
        self.frames: list[bytes] = []

    def exchange(self, frame: bytes) -> bytes:
        out = self.inner.exchange(frame)
        self.frames.append(frame)
        if self.resend_sig and frame[1] == LurkType.GET_SIG_AND_APP and frame[2:10] != NO_SESSION:
            again = self.inner.exchange(frame)
            self.report.idempotent_replays += 1
            if again != out:
                self.report.idempotent_mismatches += 1
        return out

    def close(self) -> None:
        self.inner.close()


def _forge_transcript(ke_s: bytes, server_random: bytes, group: int = codec.Group.X25519) -> bytes:
    ch_raw = ClientConnection(group=group).start()[5:]
    ch = codec.decode_message(ch_raw)
    sh = ServerHello(server_random, codec.CipherSuite.AES_128_GCM_SHA256,
                     [codec.build_supported_versions_server(), codec.build_key_share_server(group, ke_s)],
                     ch.legacy_session_id)
    return ch_raw + codec.encode_message(sh)


def run_replay_battery(n: int = 1000, seed: int = 0, warmup: int = 8,
                       identity: Optional[SigningIdentity] = None) -> ReplayReport:
    """``n`` replayed or stale-freshness LURK requests, spread over the categories.

    An acceptance is any non-error response from the crypto service (or, for
    the remote channel, any reply at all to a replayed sealed record).
    """
    rng = random.Random(seed)
    report = ReplayReport()
    identity = identity or SigningIdentity.generate()
    anchor = identity.cert_chain[0]

    # honest traffic to replay later: cs_cert_dhe_r + psk rows, and cs_cert for session-0 frames
    main = build_stack("cs_cert_dhe_r", "cs_psk_dhe_r", identity=identity)
    rec = _Recorder(main.lurk.transport, report)
    main.engine.cs = LurkClient(rec)
    cs_cert = build_stack("cs_cert", None, identity=identity)
    rec0 = _Recorder(cs_cert.lurk.transport, report, resend_sig=False)
    cs_cert.engine.cs = LurkClient(rec0)
    for _ in range(warmup):
        for stack in (main, cs_cert):
            sess = stack.engine.session()
            c = run_handshake(ClientConnection(anchor), sess)
            if c.tickets and stack is main:
                run_handshake(ClientConnection(anchor, ticket=c.tickets[0]), main.engine.session())
    stale_frames = [f for f in rec.frames if f[1] in _FRESHNESS_BOUND]
    session0_frames = [f for f in rec0.frames if f[2:10] == NO_SESSION and f[1] in _FRESHNESS_BOUND]
    old_n_e = [decode_lurk(f).fields()["n_e"] for f in stale_frames]
    old_n_s = [phi(x) for x in old_n_e]

    remote = build_stack("cs_cert_dhe_r", None, identity=identity, channel=ChannelMode.REMOTE)

    def ask(cs: CryptoService, msg: LurkMessage) -> LurkMessage:
        return decode_lurk(cs.handle_frame(encode_lurk(msg)))

    def fresh_session(cs: CryptoService) -> tuple[bytes, bytes]:
        resp = ask(cs, LurkMessage.request(LurkType.GET_ECDHE, group=u16(codec.Group.X25519)))
        resp.raise_for_error()
        return resp.session_id, resp.fields()["ke_s"]

    def record(category: str, resp: Optional[LurkMessage]) -> None:
        report.attempts[category] += 1
        if resp is None:
            report.outcomes["channel_closed"] += 1
            return
        if resp.is_error:
            report.outcomes[ErrorCode(int.from_bytes(resp.fields()["code"], "big")).name] += 1
        else:
            report.acceptances[category] += 1
            report.outcomes["accepted"] += 1

    try:
        for i in range(n):
            category = REPLAY_CATEGORIES[i % len(REPLAY_CATEGORIES)]
            if category == "frame_replay":
                resp = decode_lurk(main.cs.handle_frame(rng.choice(stale_frames)))
            elif category == "session0_replay":
                resp = decode_lurk(cs_cert.cs.handle_frame(rng.choice(session0_frames)))
            elif category == "remote_frame_replay":
                resp = _remote_replay(remote, report)
            else:
                sid, ke_s = fresh_session(main.cs)
                k = rng.randrange(len(old_n_e))
                if category == "stale_n_e":
                    n_e, n_s = old_n_e[k], old_n_s[k]
                elif category == "stale_n_s":
                    n_e, n_s = os.urandom(32), old_n_s[k]
                else:
                    n_e, n_s = os.urandom(32), phi(os.urandom(32))
                th = _forge_transcript(ke_s, n_s)
                resp = ask(main.cs, LurkMessage.request(LurkType.GET_HANDSHAKE_SECRETS, sid, transcript=th,
                                                        n_e=n_e, ke_shared=b""))
                if category != "stale_n_e":
                    report.freshness_mismatch_attempts += 1
                    if resp.is_error and int.from_bytes(resp.fields()["code"], "big") == ErrorCode.FRESHNESS_VIOLATION:
                        report.freshness_mismatch_violations += 1
            record(category, resp)
    finally:
        for stack in (main, cs_cert, remote):
            stack.close()
    return report


def _remote_replay(stack: SplitStack, report: ReplayReport) -> Optional[LurkMessage]:
    """Send one sealed request, then the same sealed bytes again on the same channel."""
    cfg = stack.server.channel_config()
    transport = RemoteTransport(cfg.address, cfg.channel_key)
    sealed: list[bytes] = []
    transport.tap = lambda direction, data: sealed.append(data) if direction == "to_cs" else None
    try:
        first = decode_lurk(transport.exchange(encode_lurk(
            LurkMessage.request(LurkType.GET_ECDHE, group=u16(codec.Group.X25519)))))
        first.raise_for_error()
        before = stack.cs.requests_served
        violations = stack.server.stats.get("sequence_violations")
        transport.send_raw(sealed[0])
        try:
            record = read_sealed_record(transport._sock)
            reply: Optional[LurkMessage] = decode_lurk(transport.framer.open(record))
        except (ChannelClosed, OSError):
            reply = None
        if stack.cs.requests_served != before:
            report.remote_reached_cs += 1
        if reply is None and stack.server.stats.get("sequence_violations") > violations:
            report.outcomes["SequenceViolation"] += 1
        return reply
    finally:
        transport.close()


# -- PFS uniqueness -------------------------------------------------------------------------

@dataclass
class PfsReport:
    n: int
    completed: int
    distinct_ke_s: int
    distinct_server_random: int

    @property
    def ok(self) -> bool:
        return self.completed == self.distinct_ke_s == self.distinct_server_random == self.n

    def to_tsv(self) -> str:
        return format_tsv(("field", "value"), [("handshakes", self.n), ("completed", self.completed),
                                               ("distinct_ke_s", self.distinct_ke_s),
                                               ("distinct_server_random", self.distinct_server_random)])


def run_pfs_battery(n: int = 1000, config: str = "cs_cert_dhe",
                    identity: Optional[SigningIdentity] = None) -> PfsReport:
    with build_stack(config, None, identity=identity) as stack:
        anchor = stack.identity.cert_chain[0]
        shares, randoms, done = set(), set(), 0
        for _ in range(n):
            c = run_handshake(ClientConnection(anchor), stack.engine.session())
            done += c.state is ClientState.DONE
            shares.add(c.server_share)
            randoms.add(c.server_random)
    return PfsReport(n, done, len(shares), len(randoms))


# -- secret confinement --------------------------------------------------------------------

class LeakyCryptoService(CryptoService):
    """Test fixture: a debug build that logs every CS-generated (EC)DHE private key."""

    def _get_ecdhe(self, rec, f):
        out = super()._get_ecdhe(rec, f)
        logging.getLogger("splitls.crypto_service").debug("debug: v=%s", bytes(rec.v).hex())
        return out


_OPAQUE = (LurkClient, CryptoService, threading.Thread, logging.Logger)


def snapshot_memory(*roots: object) -> bytes:
    """Concatenate every bytes-like value reachable from ``roots`` without crossing into the CS."""
    out: list[bytes] = []
    seen: set[int] = set()
    stack = list(roots)
    while stack:
        obj = stack.pop()
        if id(obj) in seen or obj is None:
            continue
        seen.add(id(obj))
        if isinstance(obj, (bytes, bytearray, memoryview)):
            out.append(bytes(obj))
        elif isinstance(obj, (str, int, float, bool, Enum, type)) or isinstance(obj, _OPAQUE) \
                or inspect.isroutine(obj):
            continue
        elif isinstance(obj, dict):
            stack.extend(obj.keys())
            stack.extend(obj.values())
        elif isinstance(obj, (list, tuple, set, frozenset, deque)):
            stack.extend(obj)
        else:
            if hasattr(obj, "__dict__"):
                stack.extend(vars(obj).values())
            for slot in getattr(type(obj), "__slots__", ()):
                stack.append(getattr(obj, slot, None))
    return b"\x00".join(out)


@dataclass
class ConfinementReport:
    configs: list[str]
    artifacts: int
    scanned_bytes: int
    secrets: Counter
    whitelisted: int
    hits: list[tuple[str, str]]

    @property
    def ok(self) -> bool:
        return not self.hits

    def to_tsv(self) -> str:
        rows = [("configs", ",".join(self.configs)), ("artifacts", self.artifacts),
                ("scanned_bytes", self.scanned_bytes), ("whitelisted_e_ephemerals", self.whitelisted)]
        rows += [(f"secrets_{k}", v) for k, v in sorted(self.secrets.items())]
        rows += [("hits", len(self.hits)), ("verdict", "accept" if self.ok else "reject")]
        rows += [("hit", f"{what} in {where}") for where, what in self.hits]
        return format_tsv(("field", "value"), rows)


def scan_secret_confinement(artifacts: dict[str, bytes | str], secrets: dict[str, bytes]) -> list[tuple[str, str]]:
    """Byte-scan artifacts for known secret values; text artifacts are also searched for hex."""
    hits = []
    for where, blob in artifacts.items():
        for label, value in secrets.items():
            if not value:
                continue
            if isinstance(blob, str):
                found = value.hex() in blob.lower() or value.decode("latin-1") in blob
            else:
                found = value in blob or value.hex().encode() in blob
            if found:
                hits.append((where, label))
    return hits


def run_confinement(configs: Sequence[tuple[str, Optional[str]]] = tuple((c, "cs_psk_dhe_r") for c in CERT_ROWS),
                    leaky: bool = False, handshakes: int = 3,
                    identity: Optional[SigningIdentity] = None) -> ConfinementReport:
    """Run handshakes (and resumptions where tickets are issued) and scan E-visible artifacts.

    Secrets are the CS signing key, every PSK the clients derived and every
    (EC)DHE private key the CS generated. (EC)DHE keys the engine generated
    itself (rows without CS-(EC)DHE, keyless included) are E-owned and not
    part of the secret set; they are counted as whitelisted. The CS runs
    in-process, so its log lines count as E-visible.
    """
    identity = identity or SigningIdentity.generate()
    anchor = identity.cert_chain[0]
    cs_keys: list[bytes] = []
    e_keys: list[bytes] = []

    def cs_keygen(group):
        v, pub = kex.generate_keypair(group)
        cs_keys.append(bytes(v))
        return v, pub

    def e_keygen(group):
        v, pub = kex.generate_keypair(group)
        e_keys.append(bytes(v))
        return v, pub

    buf = io.StringIO()
    handler = logging.StreamHandler(buf)
    handler.setFormatter(logging.Formatter("%(name)s %(levelname)s %(message)s"))
    root = logging.getLogger("splitls")
    prev = root.level
    root.addHandler(handler)
    root.setLevel(logging.DEBUG)
    artifacts: dict[str, bytes | str] = {}
    psks: list[bytes] = []
    try:
        for cert, psk in configs:
            wire: list[bytes] = []
            tap = lambda direction, data: wire.append(bytes(data))
            stack = build_stack(cert, psk, identity=identity, tap=tap,
                                cs_factory=LeakyCryptoService if leaky else CryptoService,
                                cs_kwargs={"keygen": cs_keygen}, engine_kwargs={"keygen": e_keygen})
            snaps: list[bytes] = []
            try:
                for i in range(handshakes):
                    for ticket in (None, "resume"):
                        if ticket == "resume":
                            if not c.tickets:
                                continue
                            client = ClientConnection(anchor, ticket=c.tickets[-1])
                        else:
                            client = ClientConnection(anchor)
                        sess = stack.engine.session()
                        out = client.start()
                        while out:
                            wire.append(out)
                            back = sess.receive(out)
                            snaps.append(snapshot_memory(sess))
                            if not back:
                                break
                            wire.append(back)
                            out = client.receive(back)
                        wire.append(sess.receive(client.send_application(b"GET 64")))
                        snaps.append(snapshot_memory(sess, stack.engine))
                        psks += [t.psk for t in client.tickets]
                        if ticket is None:
                            c = client
            finally:
                stack.close()
            artifacts[f"{cert}/{psk}:wire"] = b"".join(wire)
            artifacts[f"{cert}/{psk}:memory"] = b"".join(snaps)
    finally:
        root.removeHandler(handler)
        root.setLevel(prev)
    artifacts["logs"] = buf.getvalue()
    secrets = {"sk": private_scalar_bytes(identity.key)}
    secrets.update({f"psk{i}": p for i, p in enumerate(psks)})
    secrets.update({f"cs_v{i}": v for i, v in enumerate(cs_keys)})
    hits = scan_secret_confinement(artifacts, secrets)
    counts = Counter(sk=1, psk=len(psks), cs_v=len(cs_keys))
    scanned = sum(len(a) for a in artifacts.values())
    return ConfinementReport([c for c, _ in configs], len(artifacts), scanned, counts, len(e_keys), hits)


# -- codec fuzz ----------------------------------------------------------------------------

@dataclass
class FuzzReport:
    cases: int
    seed: int
    decoded: Counter
    structured_errors: Counter
    abnormal: list[tuple[str, str, str]]

    @property
    def ok(self) -> bool:
        return not self.abnormal

    def to_tsv(self) -> str:
        rows = [("cases", self.cases), ("seed", self.seed)]
        rows += [(f"decoded_{k}", v) for k, v in sorted(self.decoded.items())]
        rows += [(f"error_{k}", v) for k, v in sorted(self.structured_errors.items())]
        rows.append(("abnormal", len(self.abnormal)))
        rows += [("abnormal_case", f"{target} {exc} {data}") for target, exc, data in self.abnormal[:20]]
        return format_tsv(("field", "value"), rows)


def _fuzz_seeds() -> tuple[list[bytes], list[bytes]]:
    """Valid handshake messages and LURK frames to mutate, taken from a live handshake."""
    frames: list[bytes] = []
    tap = lambda direction, data: frames.append(bytes(data))
    with build_stack("cs_cert_dhe_r", "cs_psk_dhe_r", tap=tap) as stack:
        anchor = stack.identity.cert_chain[0]
        first = run_handshake(ClientConnection(anchor), stack.engine.session())
        resumed = run_handshake(ClientConnection(anchor, ticket=first.tickets[-1]), stack.engine.session())
    messages = [raw for c in (first, resumed) for _, raw in c.transcript]
    return messages, frames


def _mutate(rng: random.Random, seed: bytes) -> bytes:
    data = bytearray(seed)
    for _ in range(rng.randint(1, 4)):
        op = rng.randrange(6)
        if op == 0 and data:
            data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
        elif op == 1 and data:
            del data[rng.randrange(len(data)):]
        elif op == 2:
            pos = rng.randrange(len(data) + 1)
            data[pos:pos] = rng.randbytes(rng.randint(1, 8))
        elif op == 3 and len(data) > 4:
            # length fields sit near the front; rewriting them hits the bounds checks
            pos = rng.randrange(min(len(data), 48))
            data[pos] = rng.choice((0x00, 0x01, 0x7F, 0x80, 0xFF))
        elif op == 4 and data:
            start = rng.randrange(len(data))
            del data[start:start + rng.randint(1, 16)]
        else:
            data += rng.randbytes(rng.randint(0, 4))
    return bytes(data)


def run_codec_fuzz(n: int = 100_000, seed: int = 0) -> FuzzReport:
    """Feed ``n`` inputs to each of decode_message and decode_lurk (plus field decoding).

    Half the inputs are uniformly random bytes, half are mutations of valid
    messages. Any exception outside the decoders' declared error classes is
    an abnormal termination.
    """
    rng = random.Random(seed)
    messages, frames = _fuzz_seeds()
    decoded: Counter = Counter()
    errors: Counter = Counter()
    abnormal: list[tuple[str, str, str]] = []

    def run(target: str, fn, data: bytes, allowed: tuple[type[BaseException], ...]) -> None:
        try:
            msg = fn(data)
            decoded[f"{target}_{type(msg).__name__}"] += 1
        except allowed as exc:
            errors[f"{target}_{type(exc).__name__}"] += 1
        except Exception as exc:  # noqa: BLE001 - the point is to catch everything else
            abnormal.append((target, type(exc).__name__, data.hex()[:200]))

    def lurk_full(data: bytes):
        msg = decode_lurk(data)
        msg.fields()
        return msg

    for i in range(n):
        if i % 2:
            hs = _mutate(rng, rng.choice(messages))
            lk = _mutate(rng, rng.choice(frames))
        else:
            hs = rng.randbytes(rng.randint(0, 64)) if rng.random() < 0.5 else \
                bytes([rng.choice(list(codec.HandshakeType))]) + rng.randbytes(rng.randint(0, 96))
            lk = bytes([1, rng.choice([*range(1, 9), *range(0x81, 0x89), 0xFF])]) + rng.randbytes(rng.randint(0, 64)) \
                if rng.random() < 0.5 else rng.randbytes(rng.randint(0, 64))
        run("handshake", codec.decode_message, hs, (codec.DecodeError,))
        run("lurk", lurk_full, lk, (LurkDecodeError, LurkError))
    return FuzzReport(n, seed, decoded, errors, abnormal)
