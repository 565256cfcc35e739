"""Closed-loop client session: one request in flight, f+1 matching replies."""
from __future__ import annotations

from typing import NamedTuple

from .config import CLIENT_RETRY_TIMEOUT
from .core import ClientRequest, Reply, Signed, Submit, digest
from .crypto import sign_request, verify_signed
from .replica import Arm, Cancel, Send


class Accepted(NamedTuple):
    timestamp: int
    operation: bytes
    result: bytes
    submitted: float
    accepted: float


class ClientSession:
    """Like the replica, a step machine whose outputs are data.

    Effects: Send(replica, Submit), Arm/Cancel for the rebroadcast timer and
    Accepted once f+1 replicas vouched for the same result.
    """

    def __init__(self, cid: int, n: int, f: int, scheme, home: int, delta: float = 200.0):
        if not 0 <= home < n:
            raise ValueError(f"home replica {home} outside the group")
        self.id = cid
        self.n = n
        self.f = f
        self.scheme = scheme
        self.home = home
        self.retry = CLIENT_RETRY_TIMEOUT * delta
        self.next_timestamp = 1
        self.current = None
        self.sent_at = 0.0
        self.votes = {}
        self.retries = 0
        self.rejected_replies = 0

    @property
    def busy(self) -> bool:
        return self.current is not None

    def submit(self, now: float, operation: bytes) -> list:
        if self.current is not None:
            raise RuntimeError("a request is already in flight")
        ts = self.next_timestamp
        self.next_timestamp += 1
        self.current = sign_request(self.scheme, ClientRequest(self.id, ts, operation))
        self.votes = {}
        self.sent_at = now
        return [Send(self.home, Submit(self.current)), Arm(("retry", ts), now + self.retry)]

    def on_timer(self, now: float, key) -> list:
        if self.current is None or key[1] != self.current.timestamp:
            return []
        self.retries += 1
        env = Submit(self.current)
        out = [Send(r, env) for r in range(self.n)]
        out.append(Arm(key, now + self.retry))
        return out

    def on_reply(self, now: float, env) -> list:
        if not isinstance(env, Signed) or not isinstance(env.msg, Reply):
            return []
        m = env.msg
        req = self.current
        if req is None or m.client != self.id or m.timestamp != req.timestamp:
            return []
        if not 0 <= m.sender < self.n or not verify_signed(self.scheme, env):
            self.rejected_replies += 1
            return []
        self.votes[m.sender] = digest(m.result)
        target = self.votes[m.sender]
        if sum(1 for d in self.votes.values() if d == target) < self.f + 1:
            return []
        self.current = None
        return [Cancel(("retry", req.timestamp)),
                Accepted(req.timestamp, req.operation, m.result, self.sent_at, now)]
