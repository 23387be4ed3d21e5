"""Record protection against RFC 8448 bytes and direct AEAD calls."""

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given
from hypothesis import strategies as st

import rfc8448 as V
from splitls import codec
from splitls.codec import CipherSuite
from splitls.record import (MAX_PLAINTEXT, SEQ_LIMIT, AuthFailure, BadContentType, ContentType, RecordBuffer,
                            RecordOverflow, SeqExhausted, TrafficKeys, derive_traffic_keys, plaintext_record,
                            seal_fragmented)

SERVER_FIN_MSG = codec.encode_message(codec.Finished(V.SERVER_FINISHED))
CLIENT_FIN_MSG = codec.encode_message(codec.Finished(V.CLIENT_FINISHED))
SERVER_FLIGHT = V.ENCRYPTED_EXTENSIONS + V.CERTIFICATE + V.CERTIFICATE_VERIFY + SERVER_FIN_MSG


def _oracle(key: bytes, iv: bytes, seq: int, inner: bytes) -> bytes:
    nonce = bytes(a ^ b for a, b in zip(iv, seq.to_bytes(12, "big")))
    header = b"\x17\x03\x03" + (len(inner) + 16).to_bytes(2, "big")
    return header + AESGCM(key).encrypt(nonce, inner, header)


@pytest.mark.parametrize("secret,key,iv", [
    (V.S_HS_TRAFFIC, V.SERVER_HS_KEY, V.SERVER_HS_IV),
    (V.C_HS_TRAFFIC, V.CLIENT_HS_KEY, V.CLIENT_HS_IV),
    (V.S_AP_TRAFFIC, V.SERVER_AP_KEY, V.SERVER_AP_IV),
    (V.C_AP_TRAFFIC, V.CLIENT_AP_KEY, V.CLIENT_AP_IV),
])
def test_traffic_keys(secret, key, iv):
    tk = derive_traffic_keys(secret)
    assert (bytes(tk.key), bytes(tk.iv)) == (key, iv)


def test_application_records():
    assert derive_traffic_keys(V.C_AP_TRAFFIC).seal(V.APP_PAYLOAD, ContentType.APPLICATION_DATA) == V.CLIENT_APP_RECORD
    # the server's NewSessionTicket went out first under seq 0
    server = derive_traffic_keys(V.S_AP_TRAFFIC)
    server.seq = 1
    assert server.seal(V.APP_PAYLOAD, ContentType.APPLICATION_DATA) == V.SERVER_APP_RECORD
    rx = derive_traffic_keys(V.S_AP_TRAFFIC)
    rx.seq = 1
    body, ctype = rx.open(V.SERVER_APP_RECORD)
    assert (body, ctype) == (V.APP_PAYLOAD, ContentType.APPLICATION_DATA)


def test_encrypted_server_flight():
    rec = derive_traffic_keys(V.S_HS_TRAFFIC).seal(SERVER_FLIGHT, ContentType.HANDSHAKE)
    assert rec.startswith(V.SERVER_FLIGHT_RECORD_PREFIX)
    assert rec == _oracle(V.SERVER_HS_KEY, V.SERVER_HS_IV, 0, SERVER_FLIGHT + b"\x16")


def test_encrypted_client_finished():
    rec = derive_traffic_keys(V.C_HS_TRAFFIC).seal(CLIENT_FIN_MSG, ContentType.HANDSHAKE)
    assert rec == _oracle(V.CLIENT_HS_KEY, V.CLIENT_HS_IV, 0, CLIENT_FIN_MSG + b"\x16")


@given(st.lists(st.binary(max_size=200), min_size=1, max_size=6))
def test_nonce_follows_sequence(payloads):
    tx = derive_traffic_keys(V.C_AP_TRAFFIC)
    for seq, p in enumerate(payloads):
        assert tx.seal(p, ContentType.APPLICATION_DATA) == _oracle(V.CLIENT_AP_KEY, V.CLIENT_AP_IV, seq, p + b"\x17")


@given(st.binary(max_size=3 * MAX_PLAINTEXT), st.sampled_from(list(CipherSuite)))
def test_roundtrip_fragmented(data, suite):
    secret = bytes(48) if suite == CipherSuite.AES_256_GCM_SHA384 else bytes(32)
    tx, rx = derive_traffic_keys(secret, suite), derive_traffic_keys(secret, suite)
    buf = RecordBuffer()
    buf.feed(seal_fragmented(tx, data, ContentType.APPLICATION_DATA))
    out = b""
    for rec in buf:
        body, ctype = rx.open(rec)
        assert ctype == ContentType.APPLICATION_DATA
        out += body
    assert out == data
    assert buf.pending == 0


def test_tamper_and_replay_fail():
    rec = bytearray(V.CLIENT_APP_RECORD)
    rec[10] ^= 1
    with pytest.raises(AuthFailure):
        derive_traffic_keys(V.C_AP_TRAFFIC).open(bytes(rec))
    rx = derive_traffic_keys(V.C_AP_TRAFFIC)
    rx.open(V.CLIENT_APP_RECORD)
    with pytest.raises(AuthFailure):
        rx.open(V.CLIENT_APP_RECORD)


def test_padding_stripped_and_empty_inner_rejected():
    padded = _oracle(V.CLIENT_AP_KEY, V.CLIENT_AP_IV, 0, b"hi\x17" + bytes(5))
    assert derive_traffic_keys(V.C_AP_TRAFFIC).open(padded) == (b"hi", ContentType.APPLICATION_DATA)
    all_zero = _oracle(V.CLIENT_AP_KEY, V.CLIENT_AP_IV, 0, bytes(4))
    with pytest.raises(BadContentType):
        derive_traffic_keys(V.C_AP_TRAFFIC).open(all_zero)


def test_limits():
    tk = TrafficKeys(bytearray(16), bytearray(12), seq=SEQ_LIMIT)
    with pytest.raises(SeqExhausted):
        tk.seal(b"", ContentType.APPLICATION_DATA)
    with pytest.raises(RecordOverflow):
        TrafficKeys(bytearray(16), bytearray(12)).seal(bytes(MAX_PLAINTEXT + 1), ContentType.APPLICATION_DATA)
    with pytest.raises(RecordOverflow):
        plaintext_record(ContentType.HANDSHAKE, bytes(MAX_PLAINTEXT + 1))
    buf = RecordBuffer()
    buf.feed(b"\x17\x03\x03\xff\xff")
    with pytest.raises(RecordOverflow):
        list(buf)


def test_zeroize():
    tk = derive_traffic_keys(V.C_AP_TRAFFIC)
    tk.zeroize()
    assert not any(tk.key) and not any(tk.iv)
