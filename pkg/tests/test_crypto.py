import pytest

from egalbft.core import ClientRequest, DepCommit, SlotId, Signed
from egalbft.crypto import (
    Ed25519Scheme, client_principal, make_scheme, replica_principal, sign_message,
    sign_request, verify_request, verify_signed,
)

PRINCIPALS = [replica_principal(i) for i in range(4)] + [client_principal(0)]


@pytest.mark.parametrize("name", ["mac", "ed25519"])
def test_sign_and_verify(name):
    scheme = make_scheme(name, PRINCIPALS)
    s = sign_message(scheme, DepCommit(SlotId(0, 1), 2, bytes(32)))
    assert verify_signed(scheme, s)
    forged = Signed(DepCommit(SlotId(0, 1), 3, bytes(32)), s.sig)
    assert not verify_signed(scheme, forged)
    tampered = Signed(s.msg, bytes(len(s.sig)))
    assert not verify_signed(scheme, tampered)


@pytest.mark.parametrize("name", ["mac", "ed25519"])
def test_client_requests_are_signed(name):
    scheme = make_scheme(name, PRINCIPALS)
    r = sign_request(scheme, ClientRequest(0, 1, b"op"))
    assert verify_request(scheme, r)
    assert not verify_request(scheme, ClientRequest(0, 2, b"op", r.signature))


def test_restricted_scheme_signs_only_owned_keys():
    full = Ed25519Scheme.deterministic(PRINCIPALS)
    mine = full.restricted([replica_principal(1)])
    s = sign_message(mine, DepCommit(SlotId(0, 1), 1, bytes(32)))
    assert verify_signed(full, s)
    with pytest.raises(KeyError):
        sign_message(mine, DepCommit(SlotId(0, 1), 2, bytes(32)))


def test_unknown_principal_fails_verification():
    scheme = Ed25519Scheme.deterministic(PRINCIPALS[:2])
    other = Ed25519Scheme.deterministic([replica_principal(3)])
    s = sign_message(other, DepCommit(SlotId(0, 1), 3, bytes(32)))
    assert not verify_signed(scheme, s)
