"""Acceptance suite: one or more tests per criterion, summarized per criterion at the end of the run."""

import dataclasses
import hashlib
import hmac
import time
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

import rfc8448 as V
from splitls import bench, codec, plotting
from splitls.client import BadServerSignature, ClientConnection, ClientState
from splitls.codec import CertificateVerify, CipherSuite, Group, HandshakeType, SignatureScheme
from splitls.config import CERT_ROWS, PSK_ROWS, ROW_NAMES
from splitls.crypto_service import CryptoService, verify_psign, verify_quote
from splitls.engine import BadBinder, CsRejected
from splitls.harness import (build_stack, run_agreement, run_codec_fuzz, run_confinement, run_handshake,
                             run_pfs_battery, run_replay_battery)
from splitls.identity import SigningIdentity
from splitls.key_schedule import (KeySchedule, SharedKeyMaterial, binder_key_and_mac, derive_secret, early_secret,
                                  finished_key, finished_mac, hkdf_expand_label, hkdf_extract, psk_from_resumption)
from splitls.lurk import LurkError
from splitls.record import ContentType, derive_traffic_keys

REPORTS = Path(__file__).resolve().parent.parent / "reports" / "acceptance"

SCHEMES = (SignatureScheme.ED25519, SignatureScheme.ED448, SignatureScheme.ECDSA_SECP256R1_SHA256,
           SignatureScheme.ECDSA_SECP384R1_SHA384)
GROUPS = (Group.X25519, Group.X448, Group.SECP256R1, Group.SECP384R1)
SUITES = (CipherSuite.AES_128_GCM_SHA256, CipherSuite.AES_256_GCM_SHA384, CipherSuite.CHACHA20_POLY1305_SHA256)

# LURK exchanges per handshake, per configuration row
EXPECTED_EXCHANGES = {"cs_cert_dhe_r": 4, "cs_cert_dhe": 3, "cs_cert": 2, "cs_cert_keyless": 1,
           "cs_psk_dhe_r": 5, "cs_psk_dhe": 4, "cs_psk_r": 4, "cs_psk": 3}


def c(n, title):
    return pytest.mark.criterion(n, title)


def _rows(row):
    return (row, None) if row in CERT_ROWS else ("cs_cert_dhe_r", row)


# -- 1 ---------------------------------------------------------------------------------

C1 = "RFC 8448 key schedule and record protection"
FIN_S = codec.encode_message(codec.Finished(V.SERVER_FINISHED))
FIN_C = codec.encode_message(codec.Finished(V.CLIENT_FINISHED))
CH_SH = V.CLIENT_HELLO + V.SERVER_HELLO
CH_CV = CH_SH + V.ENCRYPTED_EXTENSIONS + V.CERTIFICATE + V.CERTIFICATE_VERIFY


@c(1, C1)
def test_c1_one_rtt_secrets():
    t0 = time.perf_counter()
    assert early_secret(None) == V.EARLY_SECRET
    assert derive_secret(V.EARLY_SECRET, "derived", b"") == V.DERIVED_EARLY
    assert hkdf_extract(V.DERIVED_EARLY, V.ECDHE_SHARED) == V.HANDSHAKE_SECRET
    assert derive_secret(V.HANDSHAKE_SECRET, "derived", b"") == V.DERIVED_HANDSHAKE
    assert hkdf_extract(V.DERIVED_HANDSHAKE, bytes(32)) == V.MASTER_SECRET
    ks = KeySchedule(CipherSuite.AES_128_GCM_SHA256)
    h_c, h_s = ks.derive_handshake_secrets(SharedKeyMaterial(ke=V.ECDHE_SHARED), CH_SH)
    assert (h_c, h_s) == (V.C_HS_TRAFFIC, V.S_HS_TRAFFIC)
    assert finished_key(h_s) == V.SERVER_FINISHED_KEY
    assert finished_mac(h_s, CH_CV) == V.SERVER_FINISHED
    assert finished_mac(h_c, CH_CV + FIN_S) == V.CLIENT_FINISHED
    assert ks.derive_application_secrets(CH_CV + FIN_S) == (V.C_AP_TRAFFIC, V.S_AP_TRAFFIC)
    assert derive_secret(V.MASTER_SECRET, "exp master", CH_CV + FIN_S) == V.EXPORTER_MASTER
    assert ks.derive_resumption_secret(CH_CV + FIN_S + FIN_C) == V.RESUMPTION_MASTER
    for secret, key, iv in ((V.S_HS_TRAFFIC, V.SERVER_HS_KEY, V.SERVER_HS_IV),
                            (V.C_HS_TRAFFIC, V.CLIENT_HS_KEY, V.CLIENT_HS_IV),
                            (V.S_AP_TRAFFIC, V.SERVER_AP_KEY, V.SERVER_AP_IV),
                            (V.C_AP_TRAFFIC, V.CLIENT_AP_KEY, V.CLIENT_AP_IV)):
        tk = derive_traffic_keys(secret)
        assert (bytes(tk.key), bytes(tk.iv)) == (key, iv)
    assert time.perf_counter() - t0 < 5


@c(1, C1)
def test_c1_one_rtt_records():
    t0 = time.perf_counter()
    assert derive_traffic_keys(V.C_AP_TRAFFIC).seal(V.APP_PAYLOAD, ContentType.APPLICATION_DATA) == V.CLIENT_APP_RECORD
    server = derive_traffic_keys(V.S_AP_TRAFFIC)
    server.seq = 1  # NewSessionTicket used seq 0
    assert server.seal(V.APP_PAYLOAD, ContentType.APPLICATION_DATA) == V.SERVER_APP_RECORD
    flight = V.ENCRYPTED_EXTENSIONS + V.CERTIFICATE + V.CERTIFICATE_VERIFY + FIN_S
    rec = derive_traffic_keys(V.S_HS_TRAFFIC).seal(flight, ContentType.HANDSHAKE)
    assert rec.startswith(V.SERVER_FLIGHT_RECORD_PREFIX)
    for key, iv, secret, inner in ((V.SERVER_HS_KEY, V.SERVER_HS_IV, V.S_HS_TRAFFIC, flight),
                                   (V.CLIENT_HS_KEY, V.CLIENT_HS_IV, V.C_HS_TRAFFIC, FIN_C)):
        header = b"\x17\x03\x03" + (len(inner) + 17).to_bytes(2, "big")
        expected = header + AESGCM(key).encrypt(iv, inner + b"\x16", header)
        assert derive_traffic_keys(secret).seal(inner, ContentType.HANDSHAKE) == expected
    assert time.perf_counter() - t0 < 5


@c(1, C1)
def test_c1_resumption_derivations():
    assert psk_from_resumption(V.RESUMPTION_MASTER, V.TICKET_NONCE) == V.RESUMPTION_PSK
    es = early_secret(V.RESUMPTION_PSK)
    assert es == V.RES_EARLY_SECRET
    bk = derive_secret(es, "res binder", b"")
    assert hmac.new(finished_key(bk), V.RES_TRUNCATED_CH_HASH, "sha256").digest() == V.RES_BINDER

    def ds(secret, label, h):
        return hkdf_expand_label(secret, label, h, 32)

    assert ds(es, "c e traffic", V.RES_CH_HASH) == V.RES_C_E_TRAFFIC
    assert ds(es, "e exp master", V.RES_CH_HASH) == V.RES_E_EXP_MASTER
    c_hs = ds(V.RES_HANDSHAKE_SECRET, "c hs traffic", V.RES_SH_HASH)
    assert c_hs == V.RES_C_HS_TRAFFIC
    assert ds(V.RES_HANDSHAKE_SECRET, "s hs traffic", V.RES_SH_HASH) == V.RES_S_HS_TRAFFIC
    assert finished_key(c_hs) == V.RES_C_FINISHED_KEY
    assert hkdf_extract(derive_secret(V.RES_HANDSHAKE_SECRET, "derived", b""), bytes(32)) == V.RES_MASTER_SECRET
    assert ds(V.RES_MASTER_SECRET, "c ap traffic", V.RES_SF_HASH) == V.RES_C_AP_TRAFFIC
    assert ds(V.RES_MASTER_SECRET, "s ap traffic", V.RES_SF_HASH) == V.RES_S_AP_TRAFFIC
    assert ds(V.RES_MASTER_SECRET, "exp master", V.RES_SF_HASH) == V.RES_EXP_MASTER
    assert ds(V.RES_MASTER_SECRET, "res master", V.RES_CF_HASH) == V.RES_RESUMPTION_MASTER


@c(1, C1)
def test_c1_resumption_message_and_record_bytes():
    # The resumed ClientHello/ServerHello bytes, the resumed
    # ECDHE shared secret and the resumed encrypted records are not in any vector
    # source reachable from this environment, so those byte strings cannot be checked.
    pytest.skip("resumed-trace message, ECDHE and record bytes unavailable offline; derivations checked; "
                "1-RTT handshake-flight records checked by published prefix plus AEAD oracle")


# -- 2 ---------------------------------------------------------------------------------

@c(2, "CS exchange count per configuration row")
def test_c2_exchange_counts(identity):
    t0 = time.perf_counter()
    seen = {}
    for row in ROW_NAMES:
        cert, psk = _rows(row)
        with build_stack(cert, psk, identity=identity) as stack:
            anchor = identity.cert_chain[0]
            sess = stack.engine.session()
            client = run_handshake(ClientConnection(anchor), sess)
            if psk:
                sess = stack.engine.session()
                client = run_handshake(ClientConnection(anchor, ticket=client.tickets[-1], strict_psk=True), sess)
                assert sess.resumed
            assert client.completed and sess.completed
            seen[row] = len(sess.exchanges)
    assert seen == EXPECTED_EXCHANGES
    assert time.perf_counter() - t0 < 30


# -- 3 ---------------------------------------------------------------------------------

@c(3, "key agreement across configs, suites and groups")
@pytest.mark.parametrize("scheme", SCHEMES, ids=lambda s: s.name)
def test_c3_key_agreement(scheme):
    t0 = time.perf_counter()
    ident = SigningIdentity.generate(scheme)
    anchor = ident.cert_chain[0]
    count = 0
    for row in ROW_NAMES:
        cert, psk = _rows(row)
        with build_stack(cert, psk, identity=ident) as stack:
            for suite in SUITES:
                for group in GROUPS:
                    client = ClientConnection(anchor, group=group, suites=(suite,))
                    sess = stack.engine.session()
                    run_handshake(client, sess)
                    assert client.completed and client.suite == suite
                    assert HandshakeType.CERTIFICATE_VERIFY in client.flight_kinds
                    cv = codec.decode_message(client.transcript.get(HandshakeType.CERTIFICATE_VERIFY))
                    th = client.transcript.to_bytes()
                    prefix = th[:th.index(client.transcript.get(HandshakeType.CERTIFICATE_VERIFY))]
                    hn = "sha384" if suite == CipherSuite.AES_256_GCM_SHA384 else "sha256"
                    assert verify_psign(anchor, cv.algorithm, cv.signature, prefix, hn)
                    if psk:
                        client = ClientConnection(anchor, group=group, suites=(suite,),
                                                  ticket=client.tickets[-1], strict_psk=True)
                        sess = stack.engine.session()
                        run_handshake(client, sess)
                        assert client.resumed
                    assert (client.a_c, client.a_s) == (bytes(sess.secrets.a_c), bytes(sess.secrets.a_s))
                    count += 1
    assert count == len(ROW_NAMES) * len(SUITES) * len(GROUPS)
    assert time.perf_counter() - t0 < 60


# -- 4 ---------------------------------------------------------------------------------

@c(4, "ticket resumption and binder checks")
@pytest.mark.parametrize("psk_row", ["cs_psk_dhe_r", "cs_psk"])
def test_c4_resumption(identity, psk_row):
    anchor = identity.cert_chain[0]
    with build_stack("cs_cert_dhe_r", psk_row, identity=identity) as stack:
        first = run_handshake(ClientConnection(anchor), stack.engine.session())
        ticket = first.tickets[-1]
        sess = stack.engine.session()
        again = run_handshake(ClientConnection(anchor, ticket=ticket, strict_psk=True), sess)
        assert again.completed and again.resumed and sess.resumed
        assert again.a_s == bytes(sess.secrets.a_s)
        # binder recomputed independently of the client's code path
        ch_raw = again.transcript.get(HandshakeType.CLIENT_HELLO)
        _, mac = binder_key_and_mac(ticket.psk, codec.truncate_client_hello(ch_raw))
        assert codec.decode_message(ch_raw).offered_psks.binders[0] == mac
        wrong = dataclasses.replace(ticket, psk=hashlib.sha256(ticket.psk).digest())
        bad = stack.engine.session()
        with pytest.raises(BadBinder):
            run_handshake(ClientConnection(anchor, ticket=wrong), bad)
        assert not bad.completed


# -- 5, 6 -------------------------------------------------------------------------------

@c(5, "anti-replay: 1000 attempts, 0 acceptances")
def test_c5_replay(identity):
    t0 = time.perf_counter()
    r = run_replay_battery(1000, seed=0, identity=identity)
    _write("replay.tsv", r.to_tsv())
    assert r.total_attempts == 1000
    assert r.total_acceptances == 0 and r.remote_reached_cs == 0
    assert r.freshness_mismatch_attempts > 0
    assert r.freshness_mismatch_violations == r.freshness_mismatch_attempts
    assert r.ok
    assert time.perf_counter() - t0 < 60


@c(6, "PFS uniqueness over 1000 CS-(EC)DHE handshakes")
def test_c6_pfs(identity):
    t0 = time.perf_counter()
    r = run_pfs_battery(1000, "cs_cert_dhe", identity=identity)
    _write("pfs.tsv", r.to_tsv())
    assert (r.completed, r.distinct_ke_s, r.distinct_server_random) == (1000, 1000, 1000)
    assert time.perf_counter() - t0 < 120


# -- 7 ---------------------------------------------------------------------------------

class _FlipSignature(CryptoService):
    def _get_sig_and_app(self, rec, f):
        out = super()._get_sig_and_app(rec, f)
        sig = bytearray(out["psign"])
        sig[0] ^= 1
        out["cv_msg"] = codec.encode_message(CertificateVerify(self.signature_scheme, bytes(sig)))
        return out


class _RefuseSecrets(CryptoService):
    def _get_handshake_secrets(self, rec, f):
        raise LurkError("refused")


def _zero(sess):
    return sess.n_e is not None and bytes(sess.n_e.buffer) == bytes(32)


@c(7, "N_E erased after completed and failed handshakes")
@pytest.mark.parametrize("row", ROW_NAMES)
def test_c7_nonce_after_completion(identity, row):
    cert, psk = _rows(row)
    with build_stack(cert, psk, identity=identity) as stack:
        sess = stack.engine.session()
        client = run_handshake(ClientConnection(identity.cert_chain[0]), sess)
        assert sess.completed and _zero(sess)
        if psk:
            sess = stack.engine.session()
            run_handshake(ClientConnection(identity.cert_chain[0], ticket=client.tickets[-1]), sess)
            assert sess.resumed and sess.completed and _zero(sess)


@c(7, "N_E erased after completed and failed handshakes")
def test_c7_nonce_after_failure(identity):
    anchor = identity.cert_chain[0]
    # engine rejects a corrupted client Finished record
    with build_stack("cs_cert_dhe_r", None, identity=identity) as stack:
        client, sess = ClientConnection(anchor), stack.engine.session()
        fin = bytearray(client.receive(sess.receive(client.start())))
        fin[-3] ^= 1
        with pytest.raises(Exception):
            sess.receive(bytes(fin))
        assert _zero(sess)
    # wrong PSK binder
    with build_stack("cs_cert_dhe_r", "cs_psk_dhe_r", identity=identity) as stack:
        t = run_handshake(ClientConnection(anchor), stack.engine.session()).tickets[-1]
        sess = stack.engine.session()
        with pytest.raises(BadBinder):
            run_handshake(ClientConnection(anchor, ticket=dataclasses.replace(t, psk=bytes(32))), sess)
        assert sess.n_e is None or _zero(sess)
    # crypto service refuses mid-handshake
    with build_stack("cs_cert_dhe_r", None, identity=identity, cs_factory=_RefuseSecrets) as stack:
        sess = stack.engine.session()
        with pytest.raises(CsRejected):
            run_handshake(ClientConnection(anchor), sess)
        assert _zero(sess)
    # client aborts on a bad CertificateVerify; the engine learns of it when the connection closes
    with build_stack("cs_cert_keyless", None, identity=identity, cs_factory=_FlipSignature) as stack:
        client, sess = ClientConnection(anchor), stack.engine.session()
        with pytest.raises(BadServerSignature):
            run_handshake(client, sess)
        assert client.state is ClientState.FAILED
        sess.close()
        assert _zero(sess)


# -- 8 ---------------------------------------------------------------------------------

CONFINEMENT_PAIRS = tuple((c_, "cs_psk_dhe_r") for c_ in CERT_ROWS) + \
    tuple(("cs_cert_dhe_r", p) for p in PSK_ROWS if p != "cs_psk_dhe_r")


@c(8, "secret confinement in E-visible artifacts")
def test_c8_confinement(identity):
    r = run_confinement(CONFINEMENT_PAIRS, handshakes=3, identity=identity)
    _write("confinement.tsv", r.to_tsv())
    assert r.secrets["psk"] > 0 and r.secrets["cs_v"] > 0 and r.whitelisted > 0
    assert r.hits == []


@c(8, "secret confinement in E-visible artifacts")
def test_c8_leaky_control(identity):
    r = run_confinement([("cs_cert_dhe_r", "cs_psk_dhe_r")], leaky=True, handshakes=2, identity=identity)
    assert not r.ok and any(what.startswith("cs_v") for _, what in r.hits)


# -- 9 ---------------------------------------------------------------------------------

@c(9, "agreement under a seeded mangler")
def test_c9_agreement(identity):
    t0 = time.perf_counter()
    r = run_agreement(200, seed=0, identity=identity)
    _write("agreement.tsv", r.to_tsv())
    assert r.completed > 0 and r.verdict.ok and r.verdict.checked == r.completed
    assert r.view_mismatches == 0
    leak = run_agreement(200, seed=0, leak_key=True, identity=identity)
    _write("agreement_leak_key.tsv", leak.to_tsv())
    assert not leak.verdict.ok and leak.verdict.violation
    assert time.perf_counter() - t0 < 120


# -- 10 --------------------------------------------------------------------------------

@c(10, "trusted key-binding: recompute and quote")
@pytest.mark.parametrize("row", [r for r in CERT_ROWS if r != "cs_cert_keyless"])
def test_c10_recompute(identity, row):
    with build_stack(row, None, identity=identity) as stack:
        sess = stack.engine.session()
        client = run_handshake(ClientConnection(identity.cert_chain[0]), sess)
        sess_id = sess.cs_session_id
        h_ctx = client.transcript.to_bytes()
        r1 = stack.cs.recompute(sess_id, h_ctx)
        r2 = stack.cs.recompute(sess_id, h_ctx)
        cv = codec.decode_message(client.transcript.get(HandshakeType.CERTIFICATE_VERIFY))
        assert r1 == r2
        assert (r1.psign, r1.h_c, r1.h_s, r1.a_c, r1.a_s) == (cv.signature, client._h_c, client.h_s,
                                                              client.a_c, client.a_s)
        quote = stack.cs.attest(sess_id)
        good = hashlib.sha256(stack.cs.attestation.get(sess_id).h_ctx).digest()
        assert verify_quote(quote, good, stack.cs.attest_public_key)
        for i in range(len(good)):
            bad = bytearray(good)
            bad[i] ^= 0x80
            assert not verify_quote(quote, bytes(bad), stack.cs.attest_public_key)


@c(10, "trusted key-binding: recompute and quote")
def test_c10_keyless_psign(identity):
    with build_stack("cs_cert_keyless", None, identity=identity) as stack:
        sess = stack.engine.session()
        client = run_handshake(ClientConnection(identity.cert_chain[0]), sess)
        sess_id = sess.cs_session_id
        cv = codec.decode_message(client.transcript.get(HandshakeType.CERTIFICATE_VERIFY))
        assert stack.cs.recompute(sess_id, client.transcript.to_bytes()).psign == cv.signature


# -- 11 --------------------------------------------------------------------------------

def _write(name, text):
    REPORTS.mkdir(parents=True, exist_ok=True)
    (REPORTS / name).write_text(text)


@c(11, "benchmark methodology")
def test_c11_delta_formula():
    assert bench.relative_delta(1715, 1543.5) == 10.0
    assert bench.relative_delta(1715, 1886.5) == 10.0


@pytest.mark.slow
@c(11, "benchmark methodology")
def test_c11_full_report():
    t0 = time.perf_counter()
    report = bench.run_kex_report(("Ed25519", "P-256"), ROW_NAMES, n=1000)
    elapsed = time.perf_counter() - t0
    deltas = report.deltas()
    assert set(deltas) == {(s, r) for s in ("Ed25519", "P-256") for r in ROW_NAMES}
    assert all(r.count == 1000 and r.kex_per_sec > 0 for r in report.results)
    _write("kex.tsv", report.to_tsv())
    assert plotting.plot_delta_kex(report, REPORTS / "delta_kex.png").stat().st_size > 0
    assert elapsed < 600


@pytest.mark.slow
@c(11, "benchmark methodology")
def test_c11_transfer_trend():
    tr = bench.run_transfer_report((0, 64 * 1024, 1 << 20), "cs_cert_dhe_r", "Ed25519", n=30, repeats=3)
    _write("transfer.tsv", tr.to_tsv())
    plotting.plot_transfer(tr, REPORTS / "delta_transfer.png")
    assert tr.trend_ok(), tr.to_tsv()


# -- 12 --------------------------------------------------------------------------------

@c(12, "codec robustness under fuzzing")
def test_c12_fuzz():
    t0 = time.perf_counter()
    r = run_codec_fuzz(100_000, seed=0)
    _write("fuzz.tsv", r.to_tsv())
    assert r.cases == 100_000 and r.abnormal == []
    assert time.perf_counter() - t0 < 60
