"""Slot recovery: NewView validation, NoOp fallback and re-proposal."""
from egalbft.config import ReplicaConfig
from egalbft.core import ClientRequest, DepCommit, NoOp, Signed, SlotId, Submit
from egalbft.crypto import sign_request
from egalbft.harness.checks import check_all
from egalbft.kv import footprint, write_op
from egalbft.replica import Replica
from egalbft.simnet import ClientSpec, SimConfig, simulate
from egalbft.simnet.adversary import BadNewView

from conftest import Router

SLOT = SlotId(0, 0)


def _no_depcommits(src, dest, env):
    return isinstance(env, Signed) and isinstance(env.msg, DepCommit)


def test_newview_ignoring_a_certificate_is_rejected(scheme):
    reps = [Replica(ReplicaConfig(id=i), scheme, behavior=BadNewView() if i == 0 else None,
                    tracing=True) for i in range(4)]
    net = Router(reps, drop=_no_depcommits)
    req = sign_request(scheme, ClientRequest(0, 1, write_op(b"k", b"v")))
    net.inject(0, -1, Submit(req))
    net.settle()
    assert all(r.agreement.slots[SLOT].dvs for r in reps[1:3])
    assert not any(r.agreement.slots[SLOT].committed for r in reps)
    for i in range(4):
        net.fire(i, ("commit", SLOT))
    net.settle()
    # view 0 belongs to the faulty slot owner, whose NoOp NewView contradicts the FPC
    honest = reps[1:]
    assert all(r.agreement.stats["newview_rejected"] >= 1 for r in honest)
    assert not any(r.agreement.slots[SLOT].committed for r in honest)
    for i in range(1, 4):
        net.fire(i, ("vc", SLOT, 0))
    net.settle()
    records = {r.commit_log[SLOT] for r in honest}
    assert len(records) == 1
    rec = records.pop()
    assert rec.request == req and rec.path == "viewchange"


def _single_request(adversaries):
    res = simulate(SimConfig(adversaries=adversaries, trace=True),
                   [ClientSpec(home=0, ops=[write_op(b"x", b"a")])])
    assert not res.unfinished and check_all(res, footprint).ok
    return res


def _recovered_as_noop(res):
    for r in res.correct:
        st = r.agreement.slots[SLOT]
        assert isinstance(st.record.request, NoOp) and st.record.path == "viewchange"
        assert 0 <= st.view < r.n


def _fresh_slot_of_request(res):
    slots = set()
    for r in res.correct:
        executed = [slot for slot, client, ts, _ in r.exec_log if (client, ts) == (0, 1)]
        assert len(executed) == 1
        slots.add(executed[0])
    assert len(slots) == 1 and SLOT not in slots
    return slots.pop()


def test_withheld_verify_leads_to_noop_and_permuted_reproposal():
    res = _single_request({2: "withhold"})
    _recovered_as_noop(res)
    _fresh_slot_of_request(res)
    for r in res.correct:
        again = r.agreement.slots[SlotId(0, 1)]
        assert again.record.request.client == 0
        assert tuple(again.dp.msg.fast_quorum) == (1, 3)
    assert res.replicas[0].agreement.fast_quorum == (1, 3)


def test_silent_coordinator_slot_becomes_noop():
    res = _single_request({0: {"kind": "silent", "count": 1}})
    _recovered_as_noop(res)
    fresh = _fresh_slot_of_request(res)
    assert fresh.coordinator != 0
    # the owner of the NoOp slot moves on to the next quorum in its cycle
    assert res.replicas[0].agreement.fast_quorum == (1, 3)
