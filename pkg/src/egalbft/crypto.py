"""Signature schemes.

Principals are named "replica/<i>" or "client/<x>". Two schemes share one
interface: sign(principal, data) and verify(principal, data, sig).

Ed25519Scheme is the real asymmetric scheme. MacScheme is a deterministic
keyed tag for simulation: each principal's key is derived from a shared
secret, so it proves nothing against an adversary holding that secret, but
an adversary in the simulator only ever gets its own signing function.
"""
import hashlib
import hmac

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .core import Signed, digest


def replica_principal(i: int) -> str:
    return f"replica/{i}"


def client_principal(x: int) -> str:
    return f"client/{x}"


class MacScheme:
    name = "mac"

    def __init__(self, secret: bytes = b"egalbft-test"):
        self.secret = secret
        self._keys = {}

    def _key(self, principal: str) -> bytes:
        k = self._keys.get(principal)
        if k is None:
            k = hashlib.sha256(self.secret + b"|" + principal.encode()).digest()
            self._keys[principal] = k
        return k

    def sign(self, principal: str, data: bytes) -> bytes:
        return hmac.digest(self._key(principal), digest(data), "sha256")

    def verify(self, principal: str, data: bytes, sig: bytes) -> bool:
        return hmac.compare_digest(self.sign(principal, data), sig)

    def public_key(self, principal: str) -> bytes:
        return hashlib.sha256(self._key(principal)).digest()


class Ed25519Scheme:
    """Ed25519 signatures; private keys only for locally owned principals."""

    name = "ed25519"

    def __init__(self, private=None, public=None):
        self.private = dict(private or {})
        self.public = dict(public or {})
        self._pub_objs = {}
        for p, sk in self.private.items():
            self.public.setdefault(p, raw_public(sk))

    @classmethod
    def deterministic(cls, principals, seed: bytes = b"egalbft"):
        """Keys derived from a seed; handy for reproducible local clusters."""
        private = {p: Ed25519PrivateKey.from_private_bytes(
            hashlib.sha256(seed + b"|" + p.encode()).digest()) for p in principals}
        return cls(private=private)

    def restricted(self, owned):
        """Copy that can sign only for the given principals."""
        return Ed25519Scheme({p: self.private[p] for p in owned}, self.public)

    def sign(self, principal: str, data: bytes) -> bytes:
        return self.private[principal].sign(data)

    def verify(self, principal: str, data: bytes, sig: bytes) -> bool:
        pk = self._pub_objs.get(principal)
        if pk is None:
            raw = self.public.get(principal)
            if raw is None:
                return False
            pk = self._pub_objs[principal] = Ed25519PublicKey.from_public_bytes(raw)
        try:
            pk.verify(sig, data)
            return True
        except InvalidSignature:
            return False

    def public_key(self, principal: str) -> bytes:
        return self.public[principal]


def raw_public(sk: Ed25519PrivateKey) -> bytes:
    return sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def make_scheme(name: str, principals=(), seed: bytes = b"egalbft"):
    if name == "mac":
        return MacScheme(seed)
    if name == "ed25519":
        return Ed25519Scheme.deterministic(principals, seed)
    raise ValueError(f"unknown signature scheme {name!r}")


def sign_message(scheme, msg) -> Signed:
    """Sign a replica message with the key of msg.sender."""
    s = Signed(msg, b"")
    s.sig = scheme.sign(replica_principal(msg.sender), s.payload)
    return s


def verify_signed(scheme, s: Signed) -> bool:
    """Verify once per object; the outcome is cached on the object."""
    if s._checked is not None and s._checked[0] is scheme:
        return s._checked[1]
    try:
        ok = scheme.verify(replica_principal(s.msg.sender), s.payload, s.sig)
    except (ValueError, TypeError, AttributeError):
        ok = False
    s._checked = (scheme, ok)
    return ok


def sign_request(scheme, req):
    from dataclasses import replace
    sig = scheme.sign(client_principal(req.client), req.signing_payload())
    return replace(req, signature=sig)


_REQ_OK: dict = {}


def verify_request(scheme, req) -> bool:
    key = (scheme, req)
    ok = _REQ_OK.get(key)
    if ok is None:
        ok = scheme.verify(client_principal(req.client), req.signing_payload(), req.signature)
        if len(_REQ_OK) > 200_000:
            _REQ_OK.clear()
        _REQ_OK[key] = ok
    return ok
