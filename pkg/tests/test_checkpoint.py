from egalbft.checkpoint import CheckpointManager
from egalbft.core import EMPTY_DEPS, Checkpoint, CheckpointState, DepSet, digest
from egalbft.crypto import make_scheme, replica_principal, sign_message, verify_signed

SCHEME = make_scheme("mac", [replica_principal(i) for i in range(4)])


class Host:
    def __init__(self, me=0, install_ok=True):
        self.me, self.f, self.behavior = me, 1, None
        self.sent, self.stable, self.installed = [], [], []
        self.install_ok = install_ok
        self.mgr = None

    def sign(self, m):
        return sign_message(SCHEME, m)

    def verify(self, s):
        return verify_signed(SCHEME, s)

    def broadcast(self, env):
        self.sent.append(("all", env))

    def send(self, dest, env):
        self.sent.append((dest, env))

    def set_timer(self, key, delay):
        pass

    def on_stable(self, seq, floor):
        self.stable.append((seq, floor))

    def install_snapshot(self, seq, barrier, snapshot):
        # what the executor would observe while resuming
        self.installed.append((seq, self.mgr.seq))
        return self.install_ok


def manager(**kw):
    host = Host(**kw)
    mgr = CheckpointManager(host, 800.0)
    host.mgr = mgr
    return host, mgr


def vote(sender, seq=1, barrier=DepSet({0: 0, 1: 0}), state=b"S"):
    return sign_message(SCHEME, Checkpoint(seq, sender, barrier, digest(state)))


def test_stable_after_two_f_plus_one_matching_votes():
    host, mgr = manager()
    mgr.take(DepSet({0: 0, 1: 0}), b"S")
    mgr.on_vote(vote(1))
    assert mgr.stable_seq == 0
    mgr.on_vote(vote(2))
    assert mgr.stable_seq == 1 and host.stable == [(1, DepSet({0: 0, 1: 0}))]


def test_divergent_vote_does_not_count():
    host, mgr = manager()
    mgr.take(DepSet({0: 0, 1: 0}), b"S")
    mgr.on_vote(vote(3, state=b"lie"))
    mgr.on_vote(vote(1))
    assert mgr.stable_seq == 0
    mgr.on_vote(vote(2))
    assert mgr.stable_seq == 1
    assert all(v.msg.sender != 3 for v in mgr.stable_votes)


def test_duplicate_votes_from_one_sender_count_once():
    _, mgr = manager()
    mgr.take(DepSet({0: 0, 1: 0}), b"S")
    mgr.on_vote(vote(1))
    mgr.on_vote(vote(1))
    assert mgr.stable_seq == 0


def _state_message(snapshot, seq=1):
    proof = tuple(vote(i, seq) for i in (1, 2, 3))
    return sign_message(SCHEME, CheckpointState(seq, 1, proof, snapshot))


def test_tampered_snapshot_rejected():
    host, mgr = manager()
    mgr.on_state(_state_message(b"not S"))
    assert mgr.installs == 0 and host.installed == [] and mgr.seq == 0


def test_installed_snapshot_takes_its_sequence_number_first():
    host, mgr = manager()
    mgr.on_state(_state_message(b"S"))
    assert host.installed == [(1, 1)]
    assert mgr.seq == 1 and mgr.stable_seq == 1 and mgr.installs == 1
    # the next checkpoint taken locally is numbered after the installed one
    mgr.take(DepSet({0: 20, 1: 20}), b"T")
    assert mgr.seq == 2


def test_failed_install_restores_numbering():
    host, mgr = manager(install_ok=False)
    mgr.on_state(_state_message(b"S"))
    assert mgr.seq == 0 and 1 not in mgr.local and mgr.installs == 0


def test_short_proof_rejected():
    _, mgr = manager()
    proof = (vote(1), vote(2))
    assert mgr.valid_proof(1, proof) is None
    assert mgr.valid_proof(1, proof + (vote(3),)) == (DepSet({0: 0, 1: 0}), digest(b"S"))
    assert mgr.valid_proof(1, proof + (vote(2),)) is None
