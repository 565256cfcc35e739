"""Socket runner: the same replica and client step machines over TCP.

Frames are a 4-byte big-endian length followed by one canonically encoded
envelope. A connection opens with a Hello naming the connecting principal.
Each daemon dials every peer once and writes only on that connection, so
there is a single writer per peer; inbound peer connections are read-only.
Client connections are bidirectional: replies go back on them.

Messages carry their own signatures, so a frame that fails verification is
simply ignored by the replica and the connection stays up. A frame that is
oversized or does not decode closes the connection.
"""
from __future__ import annotations

import asyncio
import logging
import struct

from .config import ReplicaConfig
from .client import Accepted, ClientSession
from .core import ENVELOPE, Hello
from .crypto import Ed25519Scheme, client_principal, replica_principal
from .encoding import DecodeError
from .replica import Arm, Cancel, Replica, Send, ToClient

log = logging.getLogger("egalbft.transport")

MAX_FRAME = 1 << 20
_LEN = struct.Struct(">I")


class FrameError(Exception):
    pass


def encode_frame(payload: bytes, max_size: int = MAX_FRAME) -> bytes:
    if len(payload) > max_size:
        raise FrameError(f"frame of {len(payload)} bytes exceeds {max_size}")
    return _LEN.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental decoder; feed() returns every complete payload so far."""

    def __init__(self, max_size: int = MAX_FRAME):
        self.max_size = max_size
        self.buf = bytearray()

    def feed(self, data: bytes) -> list:
        self.buf += data
        out = []
        while len(self.buf) >= 4:
            (n,) = _LEN.unpack_from(self.buf)
            if n > self.max_size:
                raise FrameError(f"announced frame of {n} bytes exceeds {self.max_size}")
            if len(self.buf) < 4 + n:
                break
            out.append(bytes(self.buf[4:4 + n]))
            del self.buf[:4 + n]
        return out

    @property
    def pending(self) -> int:
        return len(self.buf)


def encode_envelope(env, max_size: int = MAX_FRAME) -> bytes:
    return encode_frame(ENVELOPE.encode(env), max_size)


def decode_envelope(payload: bytes):
    try:
        return ENVELOPE.decode(payload)
    except (DecodeError, ValueError, IndexError, TypeError) as e:
        raise FrameError(f"undecodable frame: {e}") from e


def parse_address(addr: str):
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def scheme_from_tables(peers, clients=(), private=None):
    """Ed25519 scheme from a static peer table.

    peers: [{id, address, public_key (hex)}]; clients: [{id, public_key}];
    private: {principal: Ed25519PrivateKey} for the locally owned keys.
    """
    public = {replica_principal(p["id"]): bytes.fromhex(p["public_key"]) for p in peers}
    public.update({client_principal(c["id"]): bytes.fromhex(c["public_key"]) for c in clients})
    return Ed25519Scheme(private=private or {}, public=public)


def local_cluster(n: int = 4, clients: int = 1, base_port: int = 0, host="127.0.0.1",
                  seed: bytes = b"egalbft-local"):
    """A peer table, client table and full key set for a localhost cluster.
    Port 0 entries must be filled in once sockets are bound."""
    principals = [replica_principal(i) for i in range(n)] + [client_principal(c) for c in range(clients)]
    full = Ed25519Scheme.deterministic(principals, seed)
    peers = [{"id": i, "address": f"{host}:{base_port + i if base_port else 0}",
              "public_key": full.public_key(replica_principal(i)).hex()} for i in range(n)]
    ctab = [{"id": c, "public_key": full.public_key(client_principal(c)).hex()} for c in range(clients)]
    return peers, ctab, full


class _Link:
    """Outbound connection to one peer with reconnect and exponential backoff."""

    def __init__(self, daemon, peer, backoff=(0.05, 2.0), queue_limit=10_000):
        self.daemon = daemon
        self.peer = peer
        self.backoff = backoff
        self.queue = asyncio.Queue(queue_limit)
        self.task = None
        self.connects = 0

    def start(self):
        self.task = asyncio.ensure_future(self._run())

    def push(self, frame: bytes):
        if self.queue.full():
            self.queue.get_nowait()     # drop the oldest; retransmission covers it
        self.queue.put_nowait(frame)

    async def _run(self):
        delay = self.backoff[0]
        hello = encode_envelope(Hello(0, self.daemon.replica.me))
        while True:
            try:
                host, port = parse_address(self.peer["address"])
                _, writer = await asyncio.open_connection(host, port)
            except OSError:
                await asyncio.sleep(delay)
                delay = min(delay * 2, self.backoff[1])
                continue
            self.connects += 1
            delay = self.backoff[0]
            try:
                writer.write(hello)
                while True:
                    frame = await self.queue.get()
                    writer.write(frame)
                    await writer.drain()
            except (OSError, ConnectionError):
                pass
            finally:
                writer.close()


class ReplicaDaemon:
    """Runs one Replica on an asyncio loop; all inputs funnel into step()."""

    def __init__(self, cfg: ReplicaConfig, scheme, listen: str, peers, max_frame: int = MAX_FRAME,
                 behavior=None):
        self.replica = Replica(cfg, scheme, behavior=behavior)
        self.listen = listen
        self.peers = {p["id"]: p for p in peers}
        self.max_frame = max_frame
        self.links = {}
        self.client_writers = {}
        self.timers = {}
        self.server = None
        self.t0 = None
        self.port = None
        self.inbound = set()
        self.paused = {}
        self.dropped_frames = 0

    def now(self) -> float:
        return (asyncio.get_running_loop().time() - self.t0) * 1000.0

    async def start(self):
        loop = asyncio.get_running_loop()
        if self.t0 is None:
            self.t0 = loop.time()
        host, port = parse_address(self.listen)
        self.server = await asyncio.start_server(self._accept, host, self.port or port)
        self.port = self.server.sockets[0].getsockname()[1]
        return self.port

    async def restart(self):
        """Come back on the same port after stop(); replica state is kept."""
        await self.start()
        loop = asyncio.get_running_loop()
        for key, when in self.paused.items():
            self.timers[key] = loop.call_at(when, self._fire, key)
        self.paused = {}
        self.links = {}
        self.connect_peers()

    def connect_peers(self):
        for pid, peer in self.peers.items():
            if pid != self.replica.me and pid not in self.links:
                link = _Link(self, peer)
                self.links[pid] = link
                link.start()
        self._step(("start",))

    async def stop(self):
        for link in self.links.values():
            if link.task:
                link.task.cancel()
        for h in self.timers.values():
            h.cancel()
        for w in list(self.client_writers.values()) + list(self.inbound):
            w.close()
        # remember deadlines so restart() can re-arm them
        self.paused = {k: h.when() for k, h in self.timers.items()}
        self.timers = {}
        if self.server is not None:
            self.server.close()
            await self.server.wait_closed()

    # -- replica loop ---------------------------------------------------------
    def _step(self, event):
        for e in self.replica.step(self.now(), event):
            self._apply(e)

    def _apply(self, e):
        if isinstance(e, Send):
            if e.dest == self.replica.me:
                asyncio.get_running_loop().call_soon(self._step, ("message", e.dest, e.env))
                return
            link = self.links.get(e.dest)
            if link is not None:
                link.push(encode_envelope(e.env, self.max_frame))
        elif isinstance(e, ToClient):
            w = self.client_writers.get(e.client)
            if w is not None and not w.is_closing():
                w.write(encode_envelope(e.env, self.max_frame))
        elif isinstance(e, Arm):
            old = self.timers.pop(e.key, None)
            if old is not None:
                old.cancel()
            loop = asyncio.get_running_loop()
            when = self.t0 + e.deadline / 1000.0
            self.timers[e.key] = loop.call_at(when, self._fire, e.key)
        elif isinstance(e, Cancel):
            h = self.timers.pop(e.key, None)
            if h is not None:
                h.cancel()

    def _fire(self, key):
        self.timers.pop(key, None)
        self._step(("timer", key))

    async def _accept(self, reader, writer):
        dec = FrameDecoder(self.max_frame)
        who = None
        self.inbound.add(writer)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                for payload in dec.feed(data):
                    env = decode_envelope(payload)
                    if who is None:
                        if not isinstance(env, Hello):
                            raise FrameError("connection did not open with a greeting")
                        who = env
                        if env.is_client:
                            self.client_writers[env.ident] = writer
                        continue
                    src = -1 - who.ident if who.is_client else who.ident
                    self._step(("message", src, env))
        except FrameError as e:
            self.dropped_frames += 1
            log.info("replica %d closing connection: %s", self.replica.me, e)
        except (OSError, ConnectionError):
            pass
        finally:
            if who is not None and who.is_client and self.client_writers.get(who.ident) is writer:
                del self.client_writers[who.ident]
            self.inbound.discard(writer)
            writer.close()


class ClientConnection:
    """A ClientSession talking to every replica over its own connections."""

    def __init__(self, session: ClientSession, peers, max_frame: int = MAX_FRAME):
        self.session = session
        self.peers = {p["id"]: p for p in peers}
        self.max_frame = max_frame
        self.writers = {}
        self.readers = []
        self.timers = {}
        self.waiter = None
        self.t0 = None

    def now(self):
        return (asyncio.get_running_loop().time() - self.t0) * 1000.0

    async def connect(self):
        self.t0 = asyncio.get_running_loop().time()
        hello = encode_envelope(Hello(1, self.session.id))
        for pid, peer in self.peers.items():
            try:
                reader, writer = await asyncio.open_connection(*parse_address(peer["address"]))
            except OSError:
                continue
            writer.write(hello)
            self.writers[pid] = writer
            self.readers.append(asyncio.ensure_future(self._read(reader)))

    async def _read(self, reader):
        dec = FrameDecoder(self.max_frame)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    return
                for payload in dec.feed(data):
                    self._apply(self.session.on_reply(self.now(), decode_envelope(payload)))
        except (FrameError, OSError, ConnectionError):
            return

    def _apply(self, effects):
        for e in effects:
            if isinstance(e, Send):
                w = self.writers.get(e.dest)
                if w is not None and not w.is_closing():
                    w.write(encode_envelope(e.env, self.max_frame))
            elif isinstance(e, Arm):
                old = self.timers.pop(e.key, None)
                if old is not None:
                    old.cancel()
                loop = asyncio.get_running_loop()
                self.timers[e.key] = loop.call_at(self.t0 + e.deadline / 1000.0, self._fire, e.key)
            elif isinstance(e, Cancel):
                h = self.timers.pop(e.key, None)
                if h is not None:
                    h.cancel()
            elif isinstance(e, Accepted):
                if self.waiter is not None and not self.waiter.done():
                    self.waiter.set_result(e)

    def _fire(self, key):
        self.timers.pop(key, None)
        self._apply(self.session.on_timer(self.now(), key))

    async def execute(self, operation: bytes, timeout: float = 10.0) -> Accepted:
        self.waiter = asyncio.get_running_loop().create_future()
        self._apply(self.session.submit(self.now(), operation))
        return await asyncio.wait_for(self.waiter, timeout)

    async def close(self):
        for h in self.timers.values():
            h.cancel()
        for t in self.readers:
            t.cancel()
        for w in self.writers.values():
            w.close()


async def start_local_cluster(n: int = 4, f: int = 1, delta: float = 100.0, home: int = 0):
    """Bind n daemons on localhost ports, wire them up and connect one client."""
    peers, _, full = local_cluster(n, clients=1)
    daemons = []
    for i in range(n):
        scheme = full.restricted([replica_principal(i)])
        cfg = ReplicaConfig(id=i, n=n, f=f, delta=delta)
        daemons.append(ReplicaDaemon(cfg, scheme, "127.0.0.1:0", peers))
    for i, d in enumerate(daemons):
        port = await d.start()
        peers[i]["address"] = f"127.0.0.1:{port}"
    for d in daemons:
        d.peers = {p["id"]: p for p in peers}
        d.connect_peers()
    cscheme = full.restricted([client_principal(0)])
    client = ClientConnection(ClientSession(0, n, f, cscheme, home, delta), peers)
    await client.connect()
    return daemons, client, full


async def run_local_cluster(operations, n: int = 4, f: int = 1, delta: float = 100.0,
                            home: int = 0, timeout: float = 20.0):
    """Start n daemons and one client on localhost, execute the operations
    in order and return (accepted results, daemons) after shutting down."""
    daemons, client, _ = await start_local_cluster(n, f, delta, home)
    results = []
    try:
        for op in operations:
            results.append(await client.execute(op, timeout))
    finally:
        await client.close()
        for d in daemons:
            await d.stop()
    return results, daemons
