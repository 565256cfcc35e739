"""Replicated key-value application and the request conflict predicate."""
from __future__ import annotations

from dataclasses import dataclass

from .core import Batch, CheckpointRequest, ClientRequest, NoOp, digest
from .encoding import BYTES, U8, U64, Record, SortedSeq, Tagged, Tuple

READ = 0
WRITE = 1


@dataclass(frozen=True, slots=True)
class KvOperation:
    kind: int
    key: bytes
    value: bytes = b""

    def __post_init__(self):
        if self.kind not in (READ, WRITE):
            raise ValueError(f"bad operation kind {self.kind}")
        if not self.key:
            raise ValueError("empty key")


OPERATION = Record(KvOperation, [("kind", U8), ("key", BYTES), ("value", BYTES)])


def read_op(key: bytes) -> bytes:
    return OPERATION.encode(KvOperation(READ, key))


def write_op(key: bytes, value: bytes) -> bytes:
    return OPERATION.encode(KvOperation(WRITE, key, value))


def parse_op(op: bytes) -> KvOperation:
    return _parse_cached(op)


_OP_CACHE: dict = {}


def _parse_cached(op: bytes) -> KvOperation:
    v = _OP_CACHE.get(op)
    if v is None:
        v = OPERATION.decode(op)
        if len(_OP_CACHE) > 100_000:
            _OP_CACHE.clear()
        _OP_CACHE[op] = v
    return v


@dataclass(frozen=True, slots=True)
class Ack:
    pass


@dataclass(frozen=True, slots=True)
class Value:
    value: bytes


@dataclass(frozen=True, slots=True)
class Absent:
    pass


RESULT = Tagged({
    0: Record(Ack, []),
    1: Record(Value, [("value", BYTES)]),
    2: Record(Absent, []),
})
ACK = RESULT.encode(Ack())
ABSENT = RESULT.encode(Absent())


def decode_result(data: bytes):
    return RESULT.decode(data)


def footprint(req):
    """(token, is_write) pairs; two requests conflict iff they share a token
    that at least one of them writes. Same-client requests share a client
    token that always counts as a write."""
    if isinstance(req, ClientRequest):
        op = parse_op(req.operation)
        return [(("c", req.client), True), (("k", op.key), op.kind == WRITE)]
    if isinstance(req, Batch):
        out = []
        for m in req.members:
            out.extend(footprint(m))
        return out
    return []


def conflict(a, b) -> bool:
    if isinstance(a, NoOp) or isinstance(b, NoOp):
        return False
    if isinstance(a, CheckpointRequest) or isinstance(b, CheckpointRequest):
        return True
    fa = {}
    for tok, w in footprint(a):
        fa[tok] = fa.get(tok, False) or w
    for tok, w in footprint(b):
        if tok in fa and (w or fa[tok]):
            return True
    return False


class KvStore:
    """The application: a map plus the per-client duplicate filter."""

    def __init__(self):
        self.store: dict = {}
        self.last_ts: dict = {}
        self.last_result: dict = {}

    conflict = staticmethod(conflict)
    footprint = staticmethod(footprint)

    def execute(self, op: KvOperation) -> bytes:
        if op.kind == WRITE:
            self.store[op.key] = op.value
            return ACK
        v = self.store.get(op.key)
        return ABSENT if v is None else RESULT.encode(Value(v))

    def is_duplicate(self, req: ClientRequest) -> bool:
        return req.timestamp <= self.last_ts.get(req.client, 0)

    def apply(self, req: ClientRequest):
        """Execute a client request unless it is a duplicate; None if skipped."""
        if self.is_duplicate(req):
            return None
        result = self.execute(parse_op(req.operation))
        self.last_ts[req.client] = req.timestamp
        self.last_result[req.client] = result
        return result

    def cached_result(self, client: int, timestamp: int):
        if self.last_ts.get(client) == timestamp:
            return self.last_result[client]
        return None

    def snapshot(self) -> bytes:
        return SNAPSHOT.encode(_Snap(
            tuple(sorted(self.store.items())),
            tuple(sorted((c, t, self.last_result[c]) for c, t in self.last_ts.items())),
        ))

    @classmethod
    def restore(cls, data: bytes) -> "KvStore":
        snap = SNAPSHOT.decode(data)
        kv = cls()
        kv.store = dict(snap.store)
        for c, t, r in snap.clients:
            kv.last_ts[c] = t
            kv.last_result[c] = r
        return kv

    def state_digest(self) -> bytes:
        return digest(self.snapshot())


@dataclass(frozen=True)
class _Snap:
    store: tuple
    clients: tuple


SNAPSHOT = Record(_Snap, [
    ("store", SortedSeq(Tuple(BYTES, BYTES), key=lambda e: e[0])),
    ("clients", SortedSeq(Tuple(U64, U64, BYTES), key=lambda e: e[0])),
])
