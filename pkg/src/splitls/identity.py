"""Long-term signing identities and CertificateVerify signing.

Only deterministic signature schemes are offered (EdDSA and RFC 6979 ECDSA),
so re-signing the same transcript yields the same bytes.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed448, ed25519
from cryptography.x509.oid import NameOID

from .codec import SignatureScheme

PrivateKey = Union[ed25519.Ed25519PrivateKey, ed448.Ed448PrivateKey, ec.EllipticCurvePrivateKey]
PublicKey = Union[ed25519.Ed25519PublicKey, ed448.Ed448PublicKey, ec.EllipticCurvePublicKey]

SERVER_CV_CONTEXT = b"TLS 1.3, server CertificateVerify"


class UnsupportedScheme(ValueError):
    pass


def certificate_verify_input(transcript_hash: bytes) -> bytes:
    return b"\x20" * 64 + SERVER_CV_CONTEXT + b"\x00" + transcript_hash


def generate_private_key(scheme: SignatureScheme) -> PrivateKey:
    if scheme == SignatureScheme.ED25519:
        return ed25519.Ed25519PrivateKey.generate()
    if scheme == SignatureScheme.ED448:
        return ed448.Ed448PrivateKey.generate()
    if scheme == SignatureScheme.ECDSA_SECP256R1_SHA256:
        return ec.generate_private_key(ec.SECP256R1())
    if scheme == SignatureScheme.ECDSA_SECP384R1_SHA384:
        return ec.generate_private_key(ec.SECP384R1())
    raise UnsupportedScheme(f"unsupported signature scheme {scheme!r}")


def scheme_for_key(key: PrivateKey | PublicKey) -> SignatureScheme:
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return SignatureScheme.ED25519
    if isinstance(key, (ed448.Ed448PrivateKey, ed448.Ed448PublicKey)):
        return SignatureScheme.ED448
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        if isinstance(key.curve, ec.SECP256R1):
            return SignatureScheme.ECDSA_SECP256R1_SHA256
        if isinstance(key.curve, ec.SECP384R1):
            return SignatureScheme.ECDSA_SECP384R1_SHA384
    raise UnsupportedScheme(f"no supported scheme for {type(key).__name__}")


_ECDSA_HASH = {
    SignatureScheme.ECDSA_SECP256R1_SHA256: hashes.SHA256,
    SignatureScheme.ECDSA_SECP384R1_SHA384: hashes.SHA384,
}


def sign(key: PrivateKey, scheme: int, data: bytes) -> bytes:
    if scheme_for_key(key) != scheme:
        raise UnsupportedScheme(f"key cannot sign with scheme 0x{scheme:04x}")
    if scheme in _ECDSA_HASH:
        return key.sign(data, ec.ECDSA(_ECDSA_HASH[scheme](), deterministic_signing=True))
    return key.sign(data)


def verify(key: PublicKey, scheme: int, signature: bytes, data: bytes) -> bool:
    try:
        if scheme_for_key(key) != scheme:
            return False
        if scheme in _ECDSA_HASH:
            key.verify(signature, data, ec.ECDSA(_ECDSA_HASH[scheme]()))
        else:
            key.verify(signature, data)
    except (InvalidSignature, UnsupportedScheme, ValueError):
        return False
    return True


def private_scalar_bytes(key: PrivateKey) -> bytes:
    """Raw private key bytes, used by confinement scans to know what to look for."""
    if isinstance(key, ec.EllipticCurvePrivateKey):
        size = (key.curve.key_size + 7) // 8
        return key.private_numbers().private_value.to_bytes(size, "big")
    return key.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                             serialization.NoEncryption())


def self_signed_certificate(key: PrivateKey, common_name: str = "splitls") -> bytes:
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    now = datetime.datetime.now(datetime.timezone.utc)
    algorithm = None if isinstance(key, (ed25519.Ed25519PrivateKey, ed448.Ed448PrivateKey)) else hashes.SHA256()
    cert = (x509.CertificateBuilder()
            .subject_name(name).issuer_name(name)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - datetime.timedelta(days=1))
            .not_valid_after(now + datetime.timedelta(days=365))
            .sign(key, algorithm))
    return cert.public_bytes(serialization.Encoding.DER)


def certificate_public_key(cert_der: bytes) -> PublicKey:
    return x509.load_der_x509_certificate(cert_der).public_key()


@dataclass
class SigningIdentity:
    """A private key and its certificate chain (leaf first, DER)."""

    key: PrivateKey = field(repr=False)
    cert_chain: list[bytes]

    @property
    def scheme(self) -> SignatureScheme:
        return scheme_for_key(self.key)

    @property
    def public_key(self) -> PublicKey:
        return self.key.public_key()

    def sign(self, data: bytes) -> bytes:
        return sign(self.key, self.scheme, data)

    @classmethod
    def generate(cls, scheme: SignatureScheme = SignatureScheme.ED25519,
                 common_name: str = "splitls") -> SigningIdentity:
        key = generate_private_key(scheme)
        return cls(key, [self_signed_certificate(key, common_name)])

    @classmethod
    def load(cls, key_path: str | Path, cert_path: str | Path) -> SigningIdentity:
        key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=None)
        scheme_for_key(key)
        certs = x509.load_pem_x509_certificates(Path(cert_path).read_bytes())
        return cls(key, [c.public_bytes(serialization.Encoding.DER) for c in certs])

    def save(self, key_path: str | Path, cert_path: str | Path) -> None:
        Path(key_path).write_bytes(self.key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()))
        Path(key_path).chmod(0o600)
        save_certificates(self.cert_chain, cert_path)


def save_certificates(chain: list[bytes], path: str | Path) -> None:
    pem = b"".join(x509.load_der_x509_certificate(c).public_bytes(serialization.Encoding.PEM) for c in chain)
    Path(path).write_bytes(pem)


def load_certificates(path: str | Path) -> list[bytes]:
    certs = x509.load_pem_x509_certificates(Path(path).read_bytes())
    return [c.public_bytes(serialization.Encoding.DER) for c in certs]
