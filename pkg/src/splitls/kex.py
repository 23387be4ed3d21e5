"""Ephemeral (EC)DHE key pairs for the supported named groups.

Private keys travel as ``bytearray`` so owners can overwrite them once the
shared secret has been computed.
"""

from __future__ import annotations

from typing import Callable

from cryptography.hazmat.primitives.asymmetric import ec, x448, x25519
from cryptography.hazmat.primitives.serialization import Encoding, NoEncryption, PrivateFormat, PublicFormat

from .codec import Group

_CURVES = {Group.SECP256R1: (ec.SECP256R1, 32), Group.SECP384R1: (ec.SECP384R1, 48)}
_XDH = (Group.X25519, Group.X448)

SUPPORTED_GROUPS = (Group.X25519, Group.SECP256R1, Group.X448, Group.SECP384R1)


class UnsupportedGroup(ValueError):
    pass


class BadKeyShare(ValueError):
    pass


def _group(group: int) -> Group:
    try:
        g = Group(group)
    except ValueError:
        raise UnsupportedGroup(f"unsupported group 0x{group:04x}") from None
    if g not in SUPPORTED_GROUPS:
        raise UnsupportedGroup(f"unsupported group {g.name}")
    return g


def generate_keypair(group: int) -> tuple[bytearray, bytes]:
    """Return (private scalar bytes, public key share)."""
    g = _group(group)
    if g in _XDH:
        priv = x25519.X25519PrivateKey.generate() if g is Group.X25519 else x448.X448PrivateKey.generate()
        raw = priv.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return bytearray(raw), priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    curve, size = _CURVES[g]
    priv = ec.generate_private_key(curve())
    scalar = priv.private_numbers().private_value.to_bytes(size, "big")
    return bytearray(scalar), priv.public_key().public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def public_from_private(group: int, private: bytes) -> bytes:
    g = _group(group)
    if g is Group.X25519:
        key = x25519.X25519PrivateKey.from_private_bytes(bytes(private))
        return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    if g is Group.X448:
        key = x448.X448PrivateKey.from_private_bytes(bytes(private))
        return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    curve, _ = _CURVES[g]
    key = ec.derive_private_key(int.from_bytes(private, "big"), curve())
    return key.public_key().public_bytes(Encoding.X962, PublicFormat.UncompressedPoint)


def shared_secret(group: int, private: bytes, peer_public: bytes) -> bytes:
    g = _group(group)
    try:
        if g is Group.X25519:
            key = x25519.X25519PrivateKey.from_private_bytes(bytes(private))
            return key.exchange(x25519.X25519PublicKey.from_public_bytes(bytes(peer_public)))
        if g is Group.X448:
            key = x448.X448PrivateKey.from_private_bytes(bytes(private))
            return key.exchange(x448.X448PublicKey.from_public_bytes(bytes(peer_public)))
        curve, _ = _CURVES[g]
        key = ec.derive_private_key(int.from_bytes(private, "big"), curve())
        peer = ec.EllipticCurvePublicKey.from_encoded_point(curve(), bytes(peer_public))
        return key.exchange(ec.ECDH(), peer)
    except ValueError as exc:
        raise BadKeyShare(f"invalid {g.name} key share: {exc}") from None


KeyGen = Callable[[int], tuple[bytearray, bytes]]
