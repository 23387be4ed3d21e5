import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import rfc8448 as V
from splitls import codec
from splitls.codec import (Certificate, CertificateEntry, CertificateVerify, ClientHello, DecodeError,
                           EncryptedExtensions, Extension, Finished, HandshakeTranscript, HandshakeType,
                           MalformedExtension, MissingMessage, NewSessionTicket, OversizeBody, ServerHello,
                           Truncated, UnknownType)
from splitls.harness import run_codec_fuzz

RFC_MESSAGES = [V.CLIENT_HELLO, V.SERVER_HELLO, V.ENCRYPTED_EXTENSIONS, V.CERTIFICATE, V.CERTIFICATE_VERIFY]


@pytest.mark.parametrize("raw", RFC_MESSAGES, ids=["ch", "sh", "ee", "cert", "cv"])
def test_rfc_trace_roundtrips(raw):
    assert codec.encode_message(codec.decode_message(raw)) == raw


def test_rfc_client_hello_fields():
    ch = codec.decode_message(V.CLIENT_HELLO)
    assert isinstance(ch, ClientHello)
    assert ch.cipher_suites == [0x1301, 0x1303, 0x1302]
    assert ch.key_shares == [(codec.Group.X25519, V.CLIENT_X25519_PUBLIC)]
    assert ch.supported_versions == [codec.TLS13]
    assert ch.offered_psks is None


def test_rfc_server_hello_fields():
    sh = codec.decode_message(V.SERVER_HELLO)
    assert isinstance(sh, ServerHello)
    assert sh.random == V.SERVER_HELLO[6:38]
    assert sh.cipher_suite == codec.CipherSuite.AES_128_GCM_SHA256
    assert sh.key_share[0] == codec.Group.X25519 and len(sh.key_share[1]) == 32
    assert sh.selected_version == codec.TLS13


def test_empty_finished_encodes_zero_length():
    assert codec.encode_message(Finished(b"")) == b"\x14\x00\x00\x00"
    assert codec.decode_message(b"\x14\x00\x00\x00") == Finished(b"")


def test_oversize_body():
    with pytest.raises(OversizeBody):
        codec.encode_message(Finished(bytes(1 << 24)))


def test_structured_errors_carry_offsets():
    with pytest.raises(Truncated) as e:
        codec.decode_message(b"")
    assert e.value.offset == 0
    with pytest.raises(UnknownType):
        codec.decode_message(b"\x63\x00\x00\x00")
    broken = bytearray(V.SERVER_HELLO)
    broken[-3] = 0x07  # supported_versions data length now wrong
    with pytest.raises(DecodeError) as e:
        codec.decode_message(bytes(broken))
    assert e.value.offset > 38


def test_duplicate_extension_rejected():
    ee = EncryptedExtensions([Extension(0, b""), Extension(0, b"")])
    with pytest.raises(MalformedExtension):
        codec.decode_message(codec.encode_message(ee))


def test_psk_must_be_last():
    exts = [codec.build_pre_shared_key_client([(b"id", 0)], [bytes(32)]),
            codec.build_supported_versions_client([codec.TLS13])]
    raw = codec.encode_message(ClientHello(bytes(32), [0x1301], exts))
    with pytest.raises(MalformedExtension):
        codec.decode_message(raw)


def test_truncate_client_hello_drops_binders():
    exts = [codec.build_supported_versions_client([codec.TLS13]),
            codec.build_pre_shared_key_client([(b"ticket", 7)], [bytes(32)])]
    raw = codec.encode_message(ClientHello(bytes(32), [0x1301], exts))
    assert codec.truncate_client_hello(raw) == raw[:-35]


def test_transcript_prefix():
    t = HandshakeTranscript()
    for raw in RFC_MESSAGES:
        t.append(raw)
    assert codec.transcript_prefix_bytes(t, HandshakeType.CERTIFICATE) == b"".join(RFC_MESSAGES[:4])
    assert t.kinds()[0] is HandshakeType.CLIENT_HELLO
    with pytest.raises(MissingMessage):
        codec.transcript_prefix_bytes(t, HandshakeType.FINISHED)
    assert codec.parse_transcript(t.to_bytes()) == t.messages


_ext = st.builds(Extension, st.integers(0xFF00, 0xFFFF), st.binary(max_size=20))
_exts = st.lists(_ext, max_size=4, unique_by=lambda e: e.type)
_messages = st.one_of(
    st.builds(ClientHello, st.binary(min_size=32, max_size=32), st.lists(st.integers(0, 0xFFFF), min_size=1, max_size=5),
              _exts, st.binary(max_size=32)),
    st.builds(ServerHello, st.binary(min_size=32, max_size=32), st.integers(0, 0xFFFF), _exts, st.binary(max_size=32)),
    st.builds(EncryptedExtensions, _exts),
    st.builds(Certificate, st.lists(st.builds(CertificateEntry, st.binary(max_size=64), _exts), max_size=3),
              st.binary(max_size=8)),
    st.builds(CertificateVerify, st.integers(0, 0xFFFF), st.binary(max_size=128)),
    st.builds(Finished, st.binary(max_size=64)),
    st.builds(NewSessionTicket, st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.binary(max_size=8),
              st.binary(min_size=1, max_size=32), _exts),
)


@given(_messages)
def test_roundtrip(msg):
    raw = codec.encode_message(msg)
    assert codec.decode_message(raw) == msg
    assert codec.encode_message(codec.decode_message(raw)) == raw


@settings(max_examples=500)
@given(st.binary(max_size=256))
def test_decode_total(data):
    try:
        codec.decode_message(data)
    except DecodeError:
        pass


def test_fuzz_smoke():
    report = run_codec_fuzz(5000, seed=3)
    assert report.ok, report.abnormal[:3]
    assert sum(report.decoded.values()) > 0
