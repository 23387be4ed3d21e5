"""Command-line entry points: daemons, test client, benchmarks and attack batteries."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from cryptography.hazmat.primitives.asymmetric import ed25519

from . import codec
from .channel import ChannelConfig, ChannelMode, CsServer, LurkClient, connect, read_channel_key
from .client import ClientError, Ticket, client_connect, client_resume, request
from .config import PSK_ROWS, ROW_NAMES, CsConfig, InvalidConfig, Mode, read_config_file
from .crypto_service import CryptoService, Quote, verify_quote
from .engine import Engine, EngineServer, EngineSession
from .identity import SigningIdentity, load_certificates
from .lurk import LurkMessage, LurkType

log = logging.getLogger("splitls.cli")

GROUPS = {"x25519": codec.Group.X25519, "x448": codec.Group.X448,
          "secp256r1": codec.Group.SECP256R1, "secp384r1": codec.Group.SECP384R1}
CIPHERS = {"aes128": codec.CipherSuite.AES_128_GCM_SHA256, "aes256": codec.CipherSuite.AES_256_GCM_SHA384,
           "chacha20": codec.CipherSuite.CHACHA20_POLY1305_SHA256}
SCHEMES = {"ed25519": codec.SignatureScheme.ED25519, "ed448": codec.SignatureScheme.ED448,
           "p256": codec.SignatureScheme.ECDSA_SECP256R1_SHA256,
           "p384": codec.SignatureScheme.ECDSA_SECP384R1_SHA384}
BATTERIES = ("agreement", "replay", "pfs", "confinement", "fuzz", "all")

# flag defaults, applied after a --config-file is merged in
DEFAULTS = {"resumption": "on", "cs": "inprocess", "group": "x25519", "suite": None, "n": None, "seed": 0,
            "channel": "inprocess", "scheme": "ed25519", "parallel": 1}


class UsageError(Exception):
    pass


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"bad endpoint {text!r}; expected HOST:PORT")
    return host, int(port)


def _row(name: str, mode: Optional[Mode] = None) -> CsConfig:
    try:
        row = CsConfig.from_name(name)
    except InvalidConfig as exc:
        raise UsageError(str(exc)) from None
    if mode is not None and row.mode is not mode:
        raise UsageError(f"{name} is not a {mode.value} row")
    return row


def _rows(args) -> tuple[Optional[str], Optional[str]]:
    """Resolve (cert row, psk row) from --config, --psk-config and --resumption."""
    name = args.config or "cs_cert_dhe_r"
    row = _row(name)
    if row.mode is Mode.PSK:
        cert, psk = "cs_cert_dhe_r", name
    else:
        cert, psk = name, args.psk_config
        if psk is None and args.resumption == "on" and row.issues_tickets:
            psk = "cs_psk_dhe_r"
    if psk is not None:
        _row(psk, Mode.PSK)
    if args.resumption == "off":
        psk = None
    return cert, psk


def _identity(args) -> SigningIdentity:
    if not args.key or not args.cert:
        raise UsageError("--key and --cert are required")
    return SigningIdentity.load(args.key, args.cert)


def _channel_key(args) -> Optional[bytes]:
    return read_channel_key(args.channel_key) if args.channel_key else None


def _wait_for_signal() -> None:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()


# -- subcommands -------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    if not args.key or not args.cert:
        raise UsageError("--key and --cert are required")
    scheme = SCHEMES.get(args.scheme)
    if scheme is None:
        raise UsageError(f"unknown scheme {args.scheme!r}; choose from {', '.join(SCHEMES)}")
    SigningIdentity.generate(scheme).save(args.key, args.cert)
    print(f"wrote {args.key} and {args.cert}")
    if args.channel_key:
        path = Path(args.channel_key)
        path.write_text(os.urandom(32).hex() + "\n")
        path.chmod(0o600)
        print(f"wrote {path}")
    return 0


def _write_attest_pub(cs: CryptoService, attest_dir: Optional[str]) -> None:
    if attest_dir:
        Path(attest_dir).mkdir(parents=True, exist_ok=True)
        (Path(attest_dir) / "attest.pub").write_text(cs.attest_public_bytes().hex() + "\n")


def cmd_cs_serve(args) -> int:
    cert, psk = _rows(args)
    cs = CryptoService(_identity(args), cert, psk)
    _write_attest_pub(cs, args.attest_dir)
    listen = args.listen or ""
    if listen.startswith("unix:"):
        cfg = ChannelConfig(ChannelMode.LOCAL_SOCKET, listen[5:])
    else:
        key = _channel_key(args)
        if key is None:
            raise UsageError("a tcp crypto service needs --channel-key")
        cfg = ChannelConfig(ChannelMode.REMOTE, _endpoint(listen.removeprefix("tcp:")), key)
    server = CsServer(cs.handle_frame, cfg).start()
    print(f"crypto service ({cert}, {psk or 'no psk'}) listening on {server.address}", flush=True)
    try:
        _wait_for_signal()
    finally:
        server.stop()
    return 0


def _attest_hook(engine: Engine, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = threading.Lock()

    def hook(sess: EngineSession) -> None:
        if not sess.completed or sess.cs_session_id is None or engine.cs is None:
            return
        with lock:
            resp = engine.cs.request(LurkMessage.request(LurkType.ATTEST, sess.cs_session_id))
        resp.raise_for_error()
        f = resp.fields()
        quote = Quote(sess.cs_session_id, f["measurement"], f["h_ctx_hash"], f["signature"])
        # the CS attests the context it last saw; store the matching prefix of E's transcript
        msgs = codec.parse_transcript(sess.transcript.to_bytes())
        h_ctx = b""
        for i in range(len(msgs), 0, -1):
            prefix = b"".join(raw for _, raw in msgs[:i])
            if hashlib.sha256(prefix).digest() == quote.h_ctx_hash:
                h_ctx = prefix
                break
        stem = out / sess.cs_session_id.hex()
        stem.with_suffix(".quote.json").write_text(quote.to_json())
        stem.with_suffix(".hctx").write_bytes(h_ctx)

    return hook


def cmd_engine_serve(args) -> int:
    if not args.listen:
        raise UsageError("--listen HOST:PORT is required")
    listen = _endpoint(args.listen)
    resumption = args.resumption == "on"
    if args.config == "baseline":
        identity = _identity(args)
        engine = Engine(identity.cert_chain, local_identity=identity, local_resumption=resumption)
        cs = None
    else:
        cert, psk = _rows(args)
        cfg = ChannelConfig.parse(args.cs, _channel_key(args))
        cs = None
        if cfg.mode is ChannelMode.IN_PROCESS:
            identity = _identity(args)
            cs = CryptoService(identity, cert, psk)
            _write_attest_pub(cs, args.attest_dir)
            chain = identity.cert_chain
        else:
            if not args.cert:
                raise UsageError("--cert is required")
            chain = load_certificates(args.cert)
        lurk = LurkClient(connect(cfg, cs.handle_frame if cs else None))
        engine = Engine(chain, lurk, cert, psk)
    hook = _attest_hook(engine, Path(args.attest_dir)) if args.attest_dir and engine.cs else None
    server = EngineServer(engine, listen, args.max_connections, on_session=hook).start()
    print(f"engine ({args.config or 'cs_cert_dhe_r'}) listening on {server.address[0]}:{server.address[1]}",
          flush=True)
    try:
        if args.max_connections:
            server.wait()
        else:
            _wait_for_signal()
    finally:
        server.stop()
    return 0


def _ticket_to_file(ticket: Ticket, path: str) -> None:
    data = {"ticket": ticket.ticket.hex(), "psk": ticket.psk.hex(), "suite": ticket.suite,
            "lifetime": ticket.lifetime, "age_add": ticket.age_add}
    Path(path).write_text(json.dumps(data, indent=2))
    Path(path).chmod(0o600)


def _ticket_from_file(path: str) -> Ticket:
    d = json.loads(Path(path).read_text())
    return Ticket(bytes.fromhex(d["ticket"]), bytes.fromhex(d["psk"]), d["suite"], d["lifetime"], d["age_add"], 0.0)


def _client_opts(args) -> tuple[Optional[bytes], int, int]:
    if not args.connect:
        raise UsageError("--connect HOST:PORT is required")
    anchor = load_certificates(args.cert)[0] if args.cert else None
    group = GROUPS.get(args.group)
    if group is None:
        raise UsageError(f"unknown group {args.group!r}; choose from {', '.join(GROUPS)}")
    suite = CIPHERS.get(args.suite or "aes128")
    if suite is None:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(CIPHERS)}")
    return anchor, group, suite


def _describe(conn, sock, args) -> None:
    mode = "resumed" if conn.resumed else "full"
    print(f"handshake complete ({mode}) suite=0x{conn.suite:04x} tickets={len(conn.tickets)}")
    if args.request:
        body = args.request.encode()
        expect = int(args.request.split()[1]) if args.request.startswith("GET ") else len(body)
        data = request(sock, conn, body, expect)
        print(f"received {len(data)} application bytes")


def cmd_client(args) -> int:
    anchor, group, suite = _client_opts(args)
    for _ in range(args.n or 1):
        conn, sock = client_connect(_endpoint(args.connect), anchor, group, suite)
        try:
            _describe(conn, sock, args)
        finally:
            sock.close()
    if args.ticket_out:
        if not conn.tickets:
            raise UsageError("the server issued no ticket")
        _ticket_to_file(conn.tickets[-1], args.ticket_out)
        print(f"wrote ticket to {args.ticket_out}")
    return 0


def cmd_resume(args) -> int:
    anchor, group, _ = _client_opts(args)
    if not args.ticket:
        raise UsageError("--ticket FILE is required")
    conn, sock = client_resume(_endpoint(args.connect), _ticket_from_file(args.ticket), anchor, group)
    try:
        _describe(conn, sock, args)
    finally:
        sock.close()
    if not conn.resumed:
        print("server declined the ticket; completed a full handshake instead", file=sys.stderr)
        return 3
    return 0


def cmd_bench(args) -> int:
    from . import bench, plotting

    suites = (args.suite or "Ed25519,P-256").split(",")
    for s in suites:
        if s not in bench.SUITES:
            raise UsageError(f"unknown bench suite {s!r}; choose from {', '.join(bench.SUITES)}")
    configs = args.config.split(",") if args.config else list(ROW_NAMES)
    for c in configs:
        _row(c)
    out = Path(args.out or "bench-out")
    out.mkdir(parents=True, exist_ok=True)
    report = bench.run_kex_report(suites, configs, args.n or 1000, args.channel, args.parallel,
                                  progress=lambda r: print(f"{r.suite}\t{r.config}\t{r.kex_per_sec:.1f} KEX/s",
                                                           file=sys.stderr, flush=True))
    (out / "kex.tsv").write_text(report.to_tsv())
    plotting.plot_delta_kex(report, out / "delta_kex.png")
    print(report.to_tsv())
    if args.transfer:
        tr = bench.run_transfer_report(config=configs[0] if configs[0] not in PSK_ROWS else "cs_cert_dhe_r",
                                       suite=suites[0], channel=args.channel)
        (out / "transfer.tsv").write_text(tr.to_tsv())
        plotting.plot_transfer(tr, out / "delta_transfer.png")
        print(tr.to_tsv())
        print(f"trend\t{'ok' if tr.trend_ok() else 'not observed'}")
    print(f"reports in {out}")
    return 0


def cmd_attack(args) -> int:
    from . import harness

    chosen = BATTERIES[:-1] if args.battery == "all" else (args.battery,)
    ok = True
    texts = []
    for name in chosen:
        if name == "agreement":
            r = harness.run_agreement(args.n or 200, args.seed, leak_key=args.leak_key)
            held = (not r.verdict.ok) if args.leak_key else r.ok
        elif name == "replay":
            r = harness.run_replay_battery(args.n or 1000, args.seed)
            held = r.ok
        elif name == "pfs":
            r = harness.run_pfs_battery(args.n or 1000)
            held = r.ok
        elif name == "fuzz":
            r = harness.run_codec_fuzz(args.n or 100_000, args.seed)
            held = r.ok
        else:
            r = harness.run_confinement(leaky=args.leak_key)
            held = (not r.ok) if args.leak_key else r.ok
        texts.append(f"# battery {name}\n" + r.to_tsv())
        ok &= held
    text = "\n".join(texts)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return 0 if ok else 1


def cmd_attest_verify(args) -> int:
    if not (args.quote and args.hctx and args.attest_pub):
        raise UsageError("--quote, --hctx and --attest-pub are required")
    quote = Quote.from_json(Path(args.quote).read_text())
    h_ctx = Path(args.hctx).read_bytes()
    pub = ed25519.Ed25519PublicKey.from_public_bytes(bytes.fromhex(Path(args.attest_pub).read_text().strip()))
    if verify_quote(quote, hashlib.sha256(h_ctx).digest(), pub):
        print(f"quote for session {quote.session_id.hex()} verifies against {args.hctx}")
        return 0
    print(f"quote for session {quote.session_id.hex()} does NOT verify against {args.hctx}", file=sys.stderr)
    return 1


COMMANDS = {"keygen": cmd_keygen, "cs-serve": cmd_cs_serve, "engine-serve": cmd_engine_serve,
            "client": cmd_client, "resume": cmd_resume, "bench": cmd_bench, "attack": cmd_attack,
            "attest-verify": cmd_attest_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitls", description="Split TLS 1.3 engine and crypto service.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config-file", help="key = value file; flags given on the command line win")
    common.add_argument("--config", help=f"configuration row: {', '.join(ROW_NAMES)}")
    common.add_argument("--psk-config", help="PSK row served alongside a certificate row")
    common.add_argument("--key", help="PEM private key")
    common.add_argument("--cert", help="PEM certificate chain (trust anchor for client commands)")
    common.add_argument("--channel-key", help="file holding the 32-byte channel key as hex")
    common.add_argument("--resumption", choices=("on", "off"))
    common.add_argument("--n", type=int, help="count (handshakes, attempts)")
    common.add_argument("--seed", type=int)
    for name, helptext in (
            ("keygen", "generate a signing key, certificate and channel key"),
            ("cs-serve", "run a crypto service"),
            ("engine-serve", "run a TLS engine"),
            ("client", "run the test client"),
            ("resume", "resume with a saved ticket"),
            ("bench", "KEX/s and transfer benchmarks"),
            ("attack", "adversarial batteries"),
            ("attest-verify", "check a quote against an H_ctx capture")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "keygen":
            sp.add_argument("--scheme", help=f"one of {', '.join(SCHEMES)}")
        if name in ("cs-serve", "engine-serve"):
            sp.add_argument("--listen", help="HOST:PORT (cs-serve also takes unix:PATH)")
            sp.add_argument("--attest-dir", help="write attestation key and per-session quotes here")
        if name == "engine-serve":
            sp.add_argument("--cs", help="inprocess, unix:PATH or tcp:HOST:PORT")
            sp.add_argument("--max-connections", type=int, help="exit after this many connections")
        if name in ("client", "resume"):
            sp.add_argument("--connect", help="engine HOST:PORT")
            sp.add_argument("--group", help=f"one of {', '.join(GROUPS)}")
            sp.add_argument("--suite", help=f"one of {', '.join(CIPHERS)}")
            sp.add_argument("--request", help="application request, e.g. 'GET 1024'")
        if name == "client":
            sp.add_argument("--ticket-out", help="save the last ticket (and its PSK) here")
        if name == "resume":
            sp.add_argument("--ticket", help="ticket file written by client --ticket-out")
        if name == "bench":
            sp.add_argument("--suite", help="comma-separated bench suites: P-256, P-384, Ed25519, Ed448")
            sp.add_argument("--channel", choices=("inprocess", "unix", "tcp"))
            sp.add_argument("--parallel", type=int)
            sp.add_argument("--transfer", action="store_true", help="also run the download-size trend")
            sp.add_argument("--out", help="output directory for TSV and PNG reports")
        if name == "attack":
            sp.add_argument("--battery", choices=BATTERIES, default="all")
            sp.add_argument("--leak-key", action="store_true",
                            help="negative control: expect the battery to detect a planted leak")
            sp.add_argument("--out", help="also write the report here")
        if name == "attest-verify":
            sp.add_argument("--quote", help="quote JSON")
            sp.add_argument("--hctx", help="H_ctx capture (raw handshake bytes)")
            sp.add_argument("--attest-pub", help="attestation public key (hex)")
    return p


def _merge_config_file(args) -> None:
    values = read_config_file(args.config_file) if args.config_file else {}
    for key, value in values.items():
        if not hasattr(args, key):
            raise UsageError(f"{args.config_file}: unknown key {key!r}")
        if getattr(args, key) is None:
            current = DEFAULTS.get(key)
            setattr(args, key, int(value) if isinstance(current, int) or key in ("n", "max_connections")
                    else value)
    for key, value in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None and value is not None:
            setattr(args, key, value)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        _merge_config_file(args)
        return COMMANDS[args.command](args)
    except (UsageError, InvalidConfig, ValueError, OSError, ClientError) as exc:
        print(f"splitls {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
