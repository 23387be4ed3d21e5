"""Freshness binding between the engine nonce N_E and the wire ServerHello.random.

N_S = SHA-256(label || N_E). The engine keeps N_E secret and hands it to the
crypto service with every request that carries a ServerHello, so an observer
of N_S cannot produce a request the crypto service will accept.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets

FRESHNESS_LABEL = b"lurk-t/v1/freshness"
NONCE_LEN = 32


class BadLength(ValueError):
    pass


def phi(n_e: bytes) -> bytes:
    if len(n_e) != NONCE_LEN:
        raise BadLength(f"N_E must be {NONCE_LEN} bytes, got {len(n_e)}")
    return hashlib.sha256(FRESHNESS_LABEL + bytes(n_e)).digest()


def verify_freshness(n_e: bytes, n_s: bytes) -> bool:
    if len(n_s) != NONCE_LEN:
        raise BadLength(f"N_S must be {NONCE_LEN} bytes, got {len(n_s)}")
    return hmac.compare_digest(phi(n_e), bytes(n_s))


class EngineNonce:
    """A per-handshake N_E held in a mutable buffer so it can be wiped."""

    __slots__ = ("_buf",)

    def __init__(self, value: bytes | None = None) -> None:
        if value is None:
            value = secrets.token_bytes(NONCE_LEN)
        if len(value) != NONCE_LEN:
            raise BadLength(f"N_E must be {NONCE_LEN} bytes")
        self._buf = bytearray(value)

    @property
    def value(self) -> bytes:
        return bytes(self._buf)

    @property
    def buffer(self) -> bytearray:
        return self._buf

    def server_random(self) -> bytes:
        return phi(self._buf)

    def erase(self) -> None:
        self._buf[:] = bytes(NONCE_LEN)

    def is_erased(self) -> bool:
        return not any(self._buf)

    def __repr__(self) -> str:
        return f"EngineNonce(erased={self.is_erased()})"
