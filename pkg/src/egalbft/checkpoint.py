"""Checkpoint votes, stability, garbage-collection floor and state transfer."""
from __future__ import annotations

from collections import Counter

from .core import (
    EMPTY_DEPS, Checkpoint, CheckpointFetch, CheckpointState, DepSet, digest,
)


class CheckpointManager:
    """Tracks local checkpoints and the votes of every replica.

    host must provide: me, f, sign, verify, broadcast, send, set_timer,
    behavior, on_stable(seq, barrier), install_snapshot(seq, barrier, snapshot).
    """

    keep = 3

    def __init__(self, host, fetch_delay: float):
        self.host = host
        self.fetch_delay = fetch_delay
        self.seq = 0                 # checkpoints taken (or installed) locally
        self.votes: dict = {}        # seq -> {sender: Signed}
        self.local: dict = {}        # seq -> (barrier, snapshot, state hash)
        self.stable_seq = 0
        self.stable_barrier = EMPTY_DEPS
        self.stable_votes = ()
        self.floor = EMPTY_DEPS
        self.fetches = 0
        self.installs = 0

    @property
    def quorum(self):
        return 2 * self.host.f + 1

    def take(self, barrier: DepSet, snapshot: bytes):
        """Record a local checkpoint action and broadcast our vote."""
        self.seq += 1
        state_hash = digest(snapshot)
        self.local[self.seq] = (barrier, snapshot, state_hash)
        for old in [s for s in self.local if s <= self.seq - self.keep and s != self.stable_seq]:
            del self.local[old]
        vote_hash = state_hash
        beh = self.host.behavior
        if beh is not None:
            vote_hash = beh.checkpoint_hash(self.host, self.seq, state_hash)
        vote = self.host.sign(Checkpoint(self.seq, self.host.me, barrier, vote_hash))
        self.host.broadcast(vote)
        self._add(vote)
        return self.seq, state_hash

    def on_vote(self, s):
        m = s.msg
        if m.seq <= self.stable_seq or not self.host.verify(s):
            return
        self._add(s)

    def _add(self, s):
        m = s.msg
        bucket = self.votes.setdefault(m.seq, {})
        if m.sender in bucket:
            return
        bucket[m.sender] = s
        if m.seq <= self.stable_seq:
            return
        tally = Counter((v.msg.barrier, v.msg.state_hash) for v in bucket.values())
        (barrier, h), count = tally.most_common(1)[0]
        if count < self.quorum:
            return
        proof = tuple(sorted((v for v in bucket.values()
                              if (v.msg.barrier, v.msg.state_hash) == (barrier, h)),
                             key=lambda v: v.msg.sender))
        self._stabilize(m.seq, barrier, proof)

    def _stabilize(self, seq, barrier, proof):
        self.stable_seq = seq
        self.stable_barrier = barrier
        self.stable_votes = proof
        self.floor = self.floor.merge(barrier)
        for old in [s for s in self.votes if s <= seq]:
            del self.votes[old]
        self.host.on_stable(seq, self.floor)
        if self.seq < seq:
            self.host.set_timer(("fetch", seq), self.fetch_delay)

    def on_fetch_timer(self, seq):
        if self.seq >= self.stable_seq:
            return
        self.fetches += 1
        ask = self.host.sign(CheckpointFetch(self.stable_seq, self.host.me))
        for v in self.stable_votes:
            if v.msg.sender != self.host.me:
                self.host.send(v.msg.sender, ask)
        self.host.set_timer(("fetch", self.stable_seq), self.fetch_delay)

    def on_fetch(self, s):
        m = s.msg
        if not self.host.verify(s) or m.sender == self.host.me:
            return
        entry = self.local.get(self.stable_seq)
        if self.stable_seq < m.seq or entry is None or entry[2] != self.stable_votes[0].msg.state_hash:
            return
        reply = CheckpointState(self.stable_seq, self.host.me, self.stable_votes, entry[1])
        self.host.send(m.sender, self.host.sign(reply))

    def valid_proof(self, seq, votes, state_hash=None):
        senders = set()
        key = None
        for v in votes:
            m = v.msg
            if not isinstance(m, Checkpoint) or m.seq != seq or m.sender in senders:
                return None
            if key is None:
                key = (m.barrier, m.state_hash)
            elif key != (m.barrier, m.state_hash):
                return None
            if not self.host.verify(v):
                return None
            senders.add(m.sender)
        if len(senders) < self.quorum:
            return None
        if state_hash is not None and key[1] != state_hash:
            return None
        return key

    def on_state(self, s):
        m = s.msg
        if m.seq <= self.seq or not self.host.verify(s):
            return
        key = self.valid_proof(m.seq, m.votes, digest(m.snapshot))
        if key is None:
            return
        barrier, h = key
        if m.seq > self.stable_seq:
            self._stabilize(m.seq, barrier, tuple(sorted(m.votes, key=lambda v: v.msg.sender)))
        # Numbering must move first: installing resumes execution, which may
        # take the next checkpoint straight away.
        prev = self.seq
        self.seq = m.seq
        self.local[m.seq] = (barrier, m.snapshot, h)
        if self.host.install_snapshot(m.seq, barrier, m.snapshot):
            self.installs += 1
        else:
            self.seq = prev
            del self.local[m.seq]

    def proof_messages(self):
        """Stable votes, handed to a replica that asked about a collected slot."""
        return self.stable_votes
