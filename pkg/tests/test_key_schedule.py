"""Key schedule against RFC 8448 and against the HKDF in ``cryptography``."""

import hashlib
import hmac

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDFExpand
from hypothesis import given, settings
from hypothesis import strategies as st

import rfc8448 as V
from splitls import codec
from splitls.codec import CipherSuite
from splitls.key_schedule import (EmptyTranscript, KeySchedule, LengthOverflow, OutOfOrder, SharedKeyMaterial,
                                  binder_key_and_mac, derive_secret, early_secret, finished_key, finished_mac,
                                  hkdf_expand, hkdf_expand_label, hkdf_extract, psk_from_resumption)
from splitls.kex import public_from_private, shared_secret

CH_SH = V.CLIENT_HELLO + V.SERVER_HELLO
CH_CV = CH_SH + V.ENCRYPTED_EXTENSIONS + V.CERTIFICATE + V.CERTIFICATE_VERIFY
SERVER_FIN_MSG = codec.encode_message(codec.Finished(V.SERVER_FINISHED))
CLIENT_FIN_MSG = codec.encode_message(codec.Finished(V.CLIENT_FINISHED))


def test_client_key_share_matches_trace():
    assert public_from_private(codec.Group.X25519, V.CLIENT_X25519_PRIVATE) == V.CLIENT_X25519_PUBLIC
    sh = codec.decode_message(V.SERVER_HELLO)
    assert shared_secret(codec.Group.X25519, V.CLIENT_X25519_PRIVATE, sh.key_share[1]) == V.ECDHE_SHARED


def test_extract_chain_1rtt():
    es = early_secret(None)
    assert es == V.EARLY_SECRET
    derived = derive_secret(es, "derived", b"")
    assert derived == V.DERIVED_EARLY
    hs = hkdf_extract(derived, V.ECDHE_SHARED)
    assert hs == V.HANDSHAKE_SECRET
    assert derive_secret(hs, "c hs traffic", CH_SH) == V.C_HS_TRAFFIC
    assert derive_secret(hs, "s hs traffic", CH_SH) == V.S_HS_TRAFFIC
    d2 = derive_secret(hs, "derived", b"")
    assert d2 == V.DERIVED_HANDSHAKE
    master = hkdf_extract(d2, bytes(32))
    assert master == V.MASTER_SECRET
    th = CH_CV + SERVER_FIN_MSG
    assert derive_secret(master, "c ap traffic", th) == V.C_AP_TRAFFIC
    assert derive_secret(master, "s ap traffic", th) == V.S_AP_TRAFFIC
    assert derive_secret(master, "exp master", th) == V.EXPORTER_MASTER
    assert derive_secret(master, "res master", th + CLIENT_FIN_MSG) == V.RESUMPTION_MASTER


def test_stateful_schedule_1rtt():
    ks = KeySchedule(CipherSuite.AES_128_GCM_SHA256)
    h_c, h_s = ks.derive_handshake_secrets(SharedKeyMaterial(ke=V.ECDHE_SHARED), CH_SH)
    assert (h_c, h_s) == (V.C_HS_TRAFFIC, V.S_HS_TRAFFIC)
    assert finished_key(h_s) == V.SERVER_FINISHED_KEY
    assert finished_mac(h_s, CH_CV) == V.SERVER_FINISHED
    assert ks.derive_application_secrets(CH_CV + SERVER_FIN_MSG) == (V.C_AP_TRAFFIC, V.S_AP_TRAFFIC)
    # the resumption master is taken over the client Finished, so it pins that value too
    assert finished_mac(h_c, CH_CV + SERVER_FIN_MSG) == V.CLIENT_FINISHED
    assert ks.derive_resumption_secret(CH_CV + SERVER_FIN_MSG + CLIENT_FIN_MSG) == V.RESUMPTION_MASTER


def test_resumption_psk_and_binder():
    assert psk_from_resumption(V.RESUMPTION_MASTER, V.TICKET_NONCE) == V.RESUMPTION_PSK
    es = early_secret(V.RESUMPTION_PSK)
    assert es == V.RES_EARLY_SECRET
    bk = derive_secret(es, "res binder", b"")
    assert hmac.new(finished_key(bk), V.RES_TRUNCATED_CH_HASH, "sha256").digest() == V.RES_BINDER


@given(st.binary(max_size=300))
def test_binder_helper_is_finished_over_truncated_hash(truncated):
    bk, mac = binder_key_and_mac(V.RESUMPTION_PSK, truncated)
    assert bk == derive_secret(V.RES_EARLY_SECRET, "res binder", b"")
    expected = hmac.new(finished_key(bk), hashlib.sha256(truncated).digest(), "sha256").digest()
    assert mac == expected


def test_resumed_trace_from_transcript_hashes():
    def ds(secret, label, h):
        return hkdf_expand_label(secret, label, h, 32)

    assert ds(V.RES_EARLY_SECRET, "c e traffic", V.RES_CH_HASH) == V.RES_C_E_TRAFFIC
    assert ds(V.RES_EARLY_SECRET, "e exp master", V.RES_CH_HASH) == V.RES_E_EXP_MASTER
    c_hs = ds(V.RES_HANDSHAKE_SECRET, "c hs traffic", V.RES_SH_HASH)
    assert c_hs == V.RES_C_HS_TRAFFIC
    assert ds(V.RES_HANDSHAKE_SECRET, "s hs traffic", V.RES_SH_HASH) == V.RES_S_HS_TRAFFIC
    assert finished_key(c_hs) == V.RES_C_FINISHED_KEY
    assert ds(V.RES_MASTER_SECRET, "c ap traffic", V.RES_SF_HASH) == V.RES_C_AP_TRAFFIC
    assert ds(V.RES_MASTER_SECRET, "s ap traffic", V.RES_SF_HASH) == V.RES_S_AP_TRAFFIC
    assert ds(V.RES_MASTER_SECRET, "exp master", V.RES_SF_HASH) == V.RES_EXP_MASTER
    assert ds(V.RES_MASTER_SECRET, "res master", V.RES_CF_HASH) == V.RES_RESUMPTION_MASTER


@settings(max_examples=200)
@given(prk=st.binary(min_size=32, max_size=64), info=st.binary(max_size=64),
       length=st.integers(1, 255 * 32), algo=st.sampled_from(["sha256", "sha384"]))
def test_hkdf_expand_matches_library(prk, info, length, algo):
    h = {"sha256": hashes.SHA256(), "sha384": hashes.SHA384()}[algo]
    if length > 255 * h.digest_size:
        return
    assert hkdf_expand(prk, info, length, algo) == HKDFExpand(h, length, info).derive(prk)


def test_expand_length_overflow():
    with pytest.raises(LengthOverflow):
        hkdf_expand(bytes(32), b"", 255 * 32 + 1)
    with pytest.raises(LengthOverflow):
        hkdf_expand_label(bytes(32), "key", b"", 255 * 32 + 1)


def test_schedule_rejects_out_of_order_and_empty():
    ks = KeySchedule(CipherSuite.AES_128_GCM_SHA256)
    with pytest.raises(OutOfOrder):
        ks.derive_application_secrets(CH_CV)
    with pytest.raises(EmptyTranscript):
        ks.derive_handshake_secrets(SharedKeyMaterial(ke=V.ECDHE_SHARED), b"")


def test_sha384_suite_lengths():
    ks = KeySchedule(CipherSuite.AES_256_GCM_SHA384)
    h_c, h_s = ks.derive_handshake_secrets(SharedKeyMaterial(ke=bytes(48)), b"x")
    assert len(h_c) == len(h_s) == 48
    assert h_c != h_s


def test_psk_and_ecdhe_inputs_change_the_output():
    a = KeySchedule(CipherSuite.AES_128_GCM_SHA256).derive_handshake_secrets(SharedKeyMaterial(ke=b"k" * 32), b"t")
    b = KeySchedule(CipherSuite.AES_128_GCM_SHA256).derive_handshake_secrets(
        SharedKeyMaterial(ke=b"k" * 32, psk=b"p" * 32), b"t")
    assert a != b
    with pytest.raises(ValueError):
        SharedKeyMaterial()
