"""Identifiers, requests, protocol messages and their canonical encodings."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional, Union

from .encoding import (
    BYTES, HASH, I64, U8, U32, U64, Codec, DecodeError, Lazy, Opt, Record,
    Seq, SortedSeq, Tagged,
)


def digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest."""
    return hashlib.sha256(data).digest()


class ConfigError(ValueError):
    pass


def check_group(n: int, f: int):
    if f < 1:
        raise ConfigError(f"f must be at least 1, got {f}")
    if n != 3 * f + 1:
        raise ConfigError(f"need n = 3f+1 replicas, got n={n} f={f}")


@dataclass(frozen=True, order=True, slots=True)
class SlotId:
    coordinator: int
    counter: int

    def __repr__(self):
        return f"({self.coordinator},{self.counter})"


class DepSet:
    """Compact dependency set: replica -> highest counter depended upon.

    An entry (p, c) stands for every slot (p, j) with j <= c.
    """

    __slots__ = ("items", "_hash")

    def __init__(self, entries=()):
        if isinstance(entries, dict):
            entries = entries.items()
        merged = {}
        for r, c in entries:
            if c < 0:
                continue
            if c > merged.get(r, -1):
                merged[r] = c
        self.items = tuple(sorted(merged.items()))
        self._hash = None

    @classmethod
    def of_slots(cls, slots):
        return cls((s.coordinator, s.counter) for s in slots)

    def get(self, replica: int, default: int = -1) -> int:
        for r, c in self.items:
            if r == replica:
                return c
        return default

    def as_dict(self) -> dict:
        return dict(self.items)

    def slots(self):
        return [SlotId(r, c) for r, c in self.items]

    def covers(self, slot: SlotId) -> bool:
        return slot.counter <= self.get(slot.coordinator)

    def merge(self, other: "DepSet") -> "DepSet":
        if not other.items:
            return self
        if not self.items:
            return other
        return DepSet(self.items + other.items)

    def without(self, slot: SlotId) -> "DepSet":
        """Drop an explicit entry that names exactly this slot."""
        return DepSet((r, c) for r, c in self.items if (r, c) != (slot.coordinator, slot.counter))

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def __bool__(self):
        return bool(self.items)

    def __eq__(self, other):
        return isinstance(other, DepSet) and self.items == other.items

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self.items)
        return self._hash

    def __repr__(self):
        return "{" + ", ".join(f"R{r}->{c}" for r, c in self.items) + "}"


EMPTY_DEPS = DepSet()


def merge_compact(a: DepSet, b: DepSet) -> DepSet:
    """Per-replica maximum of two compact dependency sets."""
    return a.merge(b)


# -- requests ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ClientRequest:
    client: int
    timestamp: int
    operation: bytes
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return b"req" + _REQ_BODY.encode(self)


@dataclass(frozen=True, slots=True)
class NoOp:
    pass


@dataclass(frozen=True, slots=True)
class CheckpointRequest:
    pass


@dataclass(frozen=True, slots=True)
class Batch:
    members: tuple

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty batch")


Request = Union[ClientRequest, NoOp, CheckpointRequest, Batch]
NOOP = NoOp()
CP_REQUEST = CheckpointRequest()


def client_requests(req) -> tuple:
    """The client requests carried by a request (none for NoOp/checkpoint)."""
    if isinstance(req, ClientRequest):
        return (req,)
    if isinstance(req, Batch):
        return req.members
    return ()


# -- protocol messages --------------------------------------------------------

@dataclass(frozen=True, slots=True)
class DepPropose:
    slot: SlotId
    coordinator: int
    request_hash: bytes
    deps: DepSet
    fast_quorum: tuple

    @property
    def sender(self):
        return self.coordinator


@dataclass(frozen=True, slots=True)
class DepVerify:
    slot: SlotId
    sender: int
    dp_hash: bytes
    deps: DepSet


@dataclass(frozen=True, slots=True)
class DepCommit:
    slot: SlotId
    sender: int
    dv_hash: bytes


@dataclass(frozen=True, slots=True)
class Prepare:
    view: int
    slot: SlotId
    sender: int
    dv_hash: bytes


@dataclass(frozen=True, slots=True)
class Commit:
    view: int
    slot: SlotId
    sender: int
    dv_hash: bytes


class CertKind(enum.IntEnum):
    NONE = 0
    FPC = 1
    RPC = 2
    CRC = 3


@dataclass(frozen=True, slots=True)
class Certificate:
    """Evidence carried in a ViewChange.

    FPC/RPC: dp plus the 2f DepVerifys (RPC adds 2f+1 Prepares of one view).
    RPC for a NoOp or checkpoint decision has dp=None and request set.
    CRC: one auxiliary DepVerify from the sender.
    """
    kind: int = CertKind.NONE
    view: int = -1
    dp: Optional["Signed"] = None
    request: Optional[Request] = None
    dvs: tuple = ()
    prepares: tuple = ()
    aux: Optional["Signed"] = None


NO_CERT = Certificate()


@dataclass(frozen=True, slots=True)
class ViewChange:
    view: int
    slot: SlotId
    sender: int
    cert: Certificate


@dataclass(frozen=True, slots=True)
class NewView:
    view: int
    slot: SlotId
    coordinator: int
    dp: Optional["Signed"]
    request: Optional[Request]
    dvs: tuple
    vcs: tuple

    @property
    def sender(self):
        return self.coordinator


@dataclass(frozen=True, slots=True)
class Checkpoint:
    seq: int
    sender: int
    barrier: DepSet
    state_hash: bytes


@dataclass(frozen=True, slots=True)
class QueryExec:
    slot: SlotId
    sender: int


@dataclass(frozen=True, slots=True)
class Exec:
    slot: SlotId
    sender: int
    dp: Optional["Signed"]
    request: Request
    deps: DepSet


@dataclass(frozen=True, slots=True)
class Reply:
    slot: SlotId
    sender: int
    client: int
    timestamp: int
    result: bytes


@dataclass(frozen=True, slots=True)
class CheckpointFetch:
    seq: int
    sender: int


@dataclass(frozen=True, slots=True)
class CheckpointState:
    seq: int
    sender: int
    votes: tuple
    snapshot: bytes


class Signed:
    """A protocol message plus the sender's signature over its encoding."""

    __slots__ = ("msg", "sig", "_payload", "_digest", "_checked")

    def __init__(self, msg, sig: bytes):
        self.msg = msg
        self.sig = sig
        self._payload = None
        self._digest = None
        self._checked = None

    @property
    def payload(self) -> bytes:
        if self._payload is None:
            self._payload = MESSAGE.encode(self.msg)
        return self._payload

    @property
    def digest(self) -> bytes:
        """Hash of the message content (signature excluded)."""
        if self._digest is None:
            self._digest = digest(self.payload)
        return self._digest

    @property
    def sender(self) -> int:
        return self.msg.sender

    def __eq__(self, other):
        return isinstance(other, Signed) and self.msg == other.msg and self.sig == other.sig

    def __hash__(self):
        return hash((self.digest, self.sig))

    def __repr__(self):
        return f"Signed({self.msg!r})"


# -- envelopes (what actually travels on a link) ----------------------------

@dataclass(frozen=True, slots=True)
class Propose:
    """A signed DepPropose, optionally with the full request attached."""
    dp: Signed
    request: Optional[Request]


@dataclass(frozen=True, slots=True)
class Submit:
    """Client to replica request delivery."""
    request: Request


@dataclass(frozen=True, slots=True)
class Hello:
    """Stream greeting identifying the connecting principal."""
    is_client: int
    ident: int


# -- schemas ----------------------------------------------------------------

SLOT = Record(SlotId, [("coordinator", U32), ("counter", U64)])


class _DepSetCodec(Codec):
    def write(self, value, out):
        out += U32.st.pack(len(value.items))
        for r, c in value.items:
            U32.write(r, out)
            SLOT.write(SlotId(r, c), out)

    def read(self, buf, pos):
        n, pos = U32.read(buf, pos)
        if n > len(buf) - pos:
            raise DecodeError("dependency set length exceeds buffer")
        items = []
        last = -1
        for _ in range(n):
            r, pos = U32.read(buf, pos)
            s, pos = SLOT.read(buf, pos)
            if s.coordinator != r:
                raise DecodeError("dependency entry names a foreign coordinator")
            if r <= last:
                raise DecodeError("map keys not strictly ascending")
            last = r
            items.append((r, s.counter))
        return DepSet(items), pos


DEPS = _DepSetCodec()
REPLICAS = SortedSeq(U32, key=lambda r: r)

_REQ_BODY = Record(ClientRequest, [("client", U64), ("timestamp", U64), ("operation", BYTES)])
CLIENT_REQUEST = Record(ClientRequest, [
    ("client", U64), ("timestamp", U64), ("operation", BYTES), ("signature", BYTES)])
REQUEST = Tagged({
    1: CLIENT_REQUEST,
    2: Record(NoOp, []),
    3: Record(CheckpointRequest, []),
    4: Record(Batch, [("members", Seq(CLIENT_REQUEST))]),
})

SIGNED = Lazy(lambda: Record(Signed, [("msg", MESSAGE), ("sig", BYTES)]))
SIGNED_SEQ = Seq(SIGNED)

CERTIFICATE = Record(Certificate, [
    ("kind", U8), ("view", I64), ("dp", Opt(SIGNED)), ("request", Opt(REQUEST)),
    ("dvs", SIGNED_SEQ), ("prepares", SIGNED_SEQ), ("aux", Opt(SIGNED)),
])

MESSAGE = Tagged({
    10: Record(DepPropose, [("slot", SLOT), ("coordinator", U32), ("request_hash", HASH),
                            ("deps", DEPS), ("fast_quorum", REPLICAS)]),
    11: Record(DepVerify, [("slot", SLOT), ("sender", U32), ("dp_hash", HASH), ("deps", DEPS)]),
    12: Record(DepCommit, [("slot", SLOT), ("sender", U32), ("dv_hash", HASH)]),
    13: Record(Prepare, [("view", I64), ("slot", SLOT), ("sender", U32), ("dv_hash", HASH)]),
    14: Record(Commit, [("view", I64), ("slot", SLOT), ("sender", U32), ("dv_hash", HASH)]),
    15: Record(ViewChange, [("view", I64), ("slot", SLOT), ("sender", U32), ("cert", CERTIFICATE)]),
    16: Record(NewView, [("view", I64), ("slot", SLOT), ("coordinator", U32), ("dp", Opt(SIGNED)),
                         ("request", Opt(REQUEST)), ("dvs", SIGNED_SEQ), ("vcs", SIGNED_SEQ)]),
    17: Record(Checkpoint, [("seq", U64), ("sender", U32), ("barrier", DEPS), ("state_hash", HASH)]),
    18: Record(QueryExec, [("slot", SLOT), ("sender", U32)]),
    19: Record(Exec, [("slot", SLOT), ("sender", U32), ("dp", Opt(SIGNED)), ("request", REQUEST),
                      ("deps", DEPS)]),
    20: Record(Reply, [("slot", SLOT), ("sender", U32), ("client", U64), ("timestamp", U64),
                       ("result", BYTES)]),
    21: Record(CheckpointFetch, [("seq", U64), ("sender", U32)]),
    22: Record(CheckpointState, [("seq", U64), ("sender", U32), ("votes", SIGNED_SEQ),
                                 ("snapshot", BYTES)]),
})

ENVELOPE = Tagged({
    1: SIGNED.codec,
    2: Record(Propose, [("dp", SIGNED), ("request", Opt(REQUEST))]),
    3: Record(Submit, [("request", REQUEST)]),
    4: Record(Hello, [("is_client", U8), ("ident", U64)]),
})


def canonical_encode(value) -> bytes:
    """Canonical bytes for any protocol value."""
    if isinstance(value, SlotId):
        return SLOT.encode(value)
    if isinstance(value, DepSet):
        return DEPS.encode(value)
    if isinstance(value, (ClientRequest, NoOp, CheckpointRequest, Batch)):
        return REQUEST.encode(value)
    if isinstance(value, Certificate):
        return CERTIFICATE.encode(value)
    if isinstance(value, (Signed, Propose, Submit, Hello)):
        return ENVELOPE.encode(value)
    return MESSAGE.encode(value)


_REQ_HASH_CACHE: dict = {}


def request_hash(req) -> bytes:
    """h(r); cached since the same request object is hashed many times."""
    key = req
    h = _REQ_HASH_CACHE.get(key)
    if h is None:
        h = digest(REQUEST.encode(req))
        if len(_REQ_HASH_CACHE) > 200_000:
            _REQ_HASH_CACHE.clear()
        _REQ_HASH_CACHE[key] = h
    return h


NOOP_HASH = digest(REQUEST.encode(NOOP))
CP_HASH = digest(REQUEST.encode(CP_REQUEST))


def dv_set_hash(dvs) -> bytes:
    """h(dv-set): DepVerify contents in ascending sender order; empty for NoOp."""
    out = bytearray()
    ordered = sorted(dvs, key=lambda s: s.msg.sender)
    out += U32.st.pack(len(ordered))
    for s in ordered:
        out += s.payload
    return digest(bytes(out))


EMPTY_DV_HASH = dv_set_hash(())


@dataclass(frozen=True, slots=True)
class CommitRecord:
    slot: SlotId
    request: Request
    deps: DepSet
    path: str = field(default="", compare=False)

    def encode(self) -> bytes:
        return SLOT.encode(self.slot) + REQUEST.encode(self.request) + DEPS.encode(self.deps)
