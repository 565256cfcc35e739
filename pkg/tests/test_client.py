import pytest

from egalbft.client import Accepted, ClientSession
from egalbft.core import Reply, Signed, SlotId, Submit
from egalbft.crypto import client_principal, make_scheme, replica_principal, sign_message
from egalbft.replica import Arm, Cancel, Send

SCHEME = make_scheme("mac", [replica_principal(i) for i in range(4)] + [client_principal(0)])


def session():
    s = ClientSession(0, 4, 1, SCHEME, home=2, delta=100)
    out = s.submit(0.0, b"op")
    return s, out


def reply(sender, result=b"ok", ts=1, client=0):
    return sign_message(SCHEME, Reply(SlotId(2, 0), sender, client, ts, result))


def test_submit_goes_to_home_replica_and_arms_retry():
    s, out = session()
    assert out[0] == Send(2, Submit(s.current))
    assert out[1] == Arm(("retry", 1), 400.0)
    with pytest.raises(RuntimeError):
        s.submit(1.0, b"again")


def test_accepts_at_f_plus_one_matching_replies():
    s, _ = session()
    assert s.on_reply(5.0, reply(2)) == []
    assert s.on_reply(6.0, reply(2)) == []          # same replica again
    out = s.on_reply(7.0, reply(1))
    assert out[0] == Cancel(("retry", 1))
    assert out[1] == Accepted(1, b"op", b"ok", 0.0, 7.0)
    assert not s.busy


def test_fabricated_result_needs_a_second_voucher():
    s, _ = session()
    assert s.on_reply(1.0, reply(3, b"forged")) == []
    assert s.on_reply(2.0, reply(2)) == []
    out = s.on_reply(3.0, reply(0))
    assert out[-1].result == b"ok"


def test_stale_and_foreign_replies_ignored():
    s, _ = session()
    assert s.on_reply(1.0, reply(1, ts=0)) == []
    assert s.on_reply(1.0, reply(2, ts=0)) == []
    assert s.on_reply(1.0, reply(1, client=5)) == []
    assert s.votes == {}


def test_bad_signature_rejected():
    s, _ = session()
    good = reply(1)
    assert s.on_reply(1.0, Signed(good.msg, bytes(len(good.sig)))) == []
    assert s.rejected_replies == 1


def test_retry_rebroadcasts_to_all_replicas():
    s, _ = session()
    out = s.on_timer(400.0, ("retry", 1))
    assert sorted(e.dest for e in out if isinstance(e, Send)) == [0, 1, 2, 3]
    assert Arm(("retry", 1), 800.0) in out
    assert s.on_timer(400.0, ("retry", 7)) == []


def test_home_must_be_a_replica():
    with pytest.raises(ValueError):
        ClientSession(0, 4, 1, SCHEME, home=4)
