import hashlib

import pytest
from hypothesis import given
from hypothesis import strategies as st

from splitls.freshness import FRESHNESS_LABEL, BadLength, EngineNonce, phi, verify_freshness

nonces = st.binary(min_size=32, max_size=32)


def test_phi_is_labelled_sha256():
    n_e = bytes(range(32))
    assert phi(n_e) == hashlib.sha256(FRESHNESS_LABEL + n_e).digest()


@given(nonces)
def test_verify_accepts_own_image(n_e):
    assert verify_freshness(n_e, phi(n_e))


@given(nonces, nonces)
def test_distinct_nonces_do_not_verify(a, b):
    if a != b:
        assert not verify_freshness(a, phi(b))
        assert phi(a) != phi(b)


@given(nonces)
def test_image_is_not_the_preimage(n_e):
    assert phi(n_e) != n_e
    assert not verify_freshness(phi(n_e), phi(n_e))


def test_lengths_enforced():
    with pytest.raises(BadLength):
        phi(bytes(31))
    with pytest.raises(BadLength):
        verify_freshness(bytes(32), bytes(16))
    with pytest.raises(BadLength):
        EngineNonce(bytes(5))


def test_engine_nonce_erase():
    n = EngineNonce()
    sr = n.server_random()
    assert sr == phi(n.value) and not n.is_erased()
    buf = n.buffer
    n.erase()
    assert n.is_erased() and buf == bytearray(32)
    assert "erased=True" in repr(n) and sr.hex() not in repr(n)
