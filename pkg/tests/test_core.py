import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egalbft.core import (
    CP_REQUEST, ENVELOPE, MESSAGE, NOOP, REQUEST, Batch, CertKind, Certificate,
    Checkpoint, ClientRequest, Commit, ConfigError, DepCommit, DepPropose, DepSet,
    DepVerify, Exec, NewView, Prepare, Propose, QueryExec, Reply, Signed, SlotId,
    Submit, ViewChange, canonical_encode, check_group, dv_set_hash, request_hash,
)
from egalbft.crypto import make_scheme, sign_message, verify_signed
from egalbft.encoding import DecodeError

SCHEME = make_scheme("mac")

ids = st.integers(0, 6)
counters = st.integers(0, 2**40)
hashes = st.binary(min_size=32, max_size=32)
slots = st.builds(SlotId, ids, counters)
depsets = st.dictionaries(ids, st.integers(0, 2**20), max_size=5).map(DepSet)
client_reqs = st.builds(ClientRequest, st.integers(0, 2**32), st.integers(1, 2**32),
                        st.binary(max_size=40), st.binary(max_size=16))
requests = st.one_of(client_reqs, st.just(NOOP), st.just(CP_REQUEST),
                     st.lists(client_reqs, min_size=1, max_size=3).map(lambda m: Batch(tuple(m))))
views = st.integers(-1, 50)


def _signed(msg_strategy):
    return msg_strategy.map(lambda m: sign_message(SCHEME, m))


dep_proposes = st.builds(lambda s, h, d, fq: DepPropose(s, s.coordinator, h, d, tuple(sorted(set(fq)))),
                         slots, hashes, depsets, st.lists(ids, min_size=2, max_size=2, unique=True))
dep_verifies = st.builds(DepVerify, slots, ids, hashes, depsets)
simple = st.one_of(
    dep_proposes, dep_verifies,
    st.builds(DepCommit, slots, ids, hashes),
    st.builds(Prepare, views, slots, ids, hashes),
    st.builds(Commit, views, slots, ids, hashes),
    st.builds(Checkpoint, st.integers(0, 2**30), ids, depsets, hashes),
    st.builds(QueryExec, slots, ids),
    st.builds(Reply, slots, ids, st.integers(0, 2**30), st.integers(0, 2**30), st.binary(max_size=30)),
)
certs = st.one_of(
    st.just(Certificate()),
    st.builds(lambda dp, r, dvs: Certificate(CertKind.FPC, -1, dp, r, tuple(dvs)),
              _signed(dep_proposes), requests, st.lists(_signed(dep_verifies), max_size=2)),
)
compound = st.one_of(
    st.builds(ViewChange, views, slots, ids, certs),
    st.builds(Exec, slots, ids, st.none() | _signed(dep_proposes), requests, depsets),
    st.builds(lambda v, s, c, r, vcs: NewView(v, s, c, None, r, (), tuple(vcs)),
              views, slots, ids, requests,
              st.lists(_signed(st.builds(ViewChange, views, slots, ids, certs)), max_size=2)),
)
messages = st.one_of(simple, compound)


@settings(max_examples=300)
@given(messages)
def test_message_round_trip(msg):
    data = MESSAGE.encode(msg)
    back = MESSAGE.decode(data)
    assert back == msg
    assert MESSAGE.encode(back) == data


@settings(max_examples=200)
@given(st.one_of(_signed(simple), st.builds(Propose, _signed(dep_proposes), st.none() | requests),
                 st.builds(Submit, requests)))
def test_envelope_round_trip_keeps_signatures_valid(env):
    back = ENVELOPE.decode(ENVELOPE.encode(env))
    assert back == env
    if isinstance(back, Signed):
        assert verify_signed(SCHEME, back)


@given(requests)
def test_request_hash_is_function_of_encoding(req):
    back = REQUEST.decode(REQUEST.encode(req))
    assert request_hash(back) == request_hash(req)


def test_decode_rejects_trailing_and_truncated_bytes():
    data = MESSAGE.encode(DepCommit(SlotId(1, 2), 3, bytes(32)))
    with pytest.raises(DecodeError):
        MESSAGE.decode(data + b"\x00")
    with pytest.raises(DecodeError):
        MESSAGE.decode(data[:-1])


def test_encoding_is_canonical_for_dependency_order():
    a = DepSet([(2, 5), (0, 1)])
    b = DepSet({0: 1, 2: 5})
    assert canonical_encode(a) == canonical_encode(b)


@given(depsets, depsets, depsets)
def test_merge_is_a_join(a, b, c):
    assert a.merge(b) == b.merge(a)
    assert a.merge(b).merge(c) == a.merge(b.merge(c))
    assert a.merge(a) == a
    for s in a.slots():
        assert a.merge(b).covers(s)


@given(depsets, slots)
def test_covers_includes_earlier_counters(d, s):
    if d.covers(s) and s.counter > 0:
        assert d.covers(SlotId(s.coordinator, s.counter - 1))


def test_compact_entry_stands_for_earlier_slots():
    d = DepSet({2: 5})
    assert d.covers(SlotId(2, 3)) and d.covers(SlotId(2, 5))
    assert not d.covers(SlotId(2, 6)) and not d.covers(SlotId(1, 0))


def test_dv_set_hash_ignores_arrival_order():
    a = sign_message(SCHEME, DepVerify(SlotId(0, 1), 1, bytes(32), DepSet()))
    b = sign_message(SCHEME, DepVerify(SlotId(0, 1), 2, bytes(32), DepSet({3: 0})))
    assert dv_set_hash([a, b]) == dv_set_hash([b, a])
    assert dv_set_hash([a]) != dv_set_hash([a, b])


def test_group_size_is_three_f_plus_one():
    check_group(4, 1)
    check_group(7, 2)
    with pytest.raises(ConfigError):
        check_group(4, 2)
    with pytest.raises(ConfigError):
        check_group(5, 1)
