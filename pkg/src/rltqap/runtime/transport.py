"""Point-to-point transports and the per-phase all-to-all exchange."""

from __future__ import annotations

import logging
import os
import queue
import socket
import struct
import threading
import time
from pathlib import Path

from ..errors import IterationMismatch, PeerDisconnected, PhaseDesync
from .messages import Phase, PhaseMessage, decode, encode

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0
BIND_ENV = "RLTQAP_BIND_ADDR"
_FRAME = struct.Struct("<I")
_POLL = 0.1


class Transport:
    """Reliable FIFO byte-frame delivery between ``workers`` peers."""

    worker_id: int
    workers: int
    timeout: float = DEFAULT_TIMEOUT

    def __init__(self):
        self.bytes_sent = 0

    def send(self, dest: int, payload: bytes) -> None:
        raise NotImplementedError

    def recv(self, source: int) -> bytes:
        raise NotImplementedError

    def abort(self) -> None:
        """Signal peers that this worker gave up; blocked receivers fail fast."""

    def close(self) -> None:
        pass

    @property
    def peers(self) -> list[int]:
        return [w for w in range(self.workers) if w != self.worker_id]


class LocalTransport(Transport):
    """Single worker: nothing to exchange."""

    def __init__(self):
        super().__init__()
        self.worker_id = 0
        self.workers = 1


class InProcessHub:
    def __init__(self, workers: int, timeout: float = DEFAULT_TIMEOUT):
        self.workers = workers
        self.timeout = timeout
        self.queues = {(s, d): queue.Queue() for s in range(workers) for d in range(workers) if s != d}
        self.failed = threading.Event()

    def transport(self, worker_id: int) -> "InProcessTransport":
        return InProcessTransport(self, worker_id)


class InProcessTransport(Transport):
    def __init__(self, hub: InProcessHub, worker_id: int):
        super().__init__()
        self.hub = hub
        self.worker_id = worker_id
        self.workers = hub.workers
        self.timeout = hub.timeout

    def send(self, dest, payload):
        self.hub.queues[(self.worker_id, dest)].put(payload)
        self.bytes_sent += len(payload)

    def recv(self, source):
        q = self.hub.queues[(source, self.worker_id)]
        deadline = time.monotonic() + self.timeout
        while True:
            if self.hub.failed.is_set():
                raise PeerDisconnected(f"worker {self.worker_id}: run aborted by a peer")
            try:
                return q.get(timeout=_POLL)
            except queue.Empty:
                if time.monotonic() > deadline:
                    raise PeerDisconnected(
                        f"worker {self.worker_id}: no message from {source} within {self.timeout:.0f}s")

    def abort(self):
        self.hub.failed.set()


def load_hosts(path: str | Path) -> list[tuple[str, int]]:
    """Host list file: one ``host:port`` per line; line index is the worker id."""
    hosts = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        host, _, port = line.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad host entry {raw!r}; expected host:port")
        hosts.append((host, int(port)))
    if not hosts:
        raise ValueError(f"host list {path} is empty")
    return hosts


def _recv_exact(sock: socket.socket, size: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(min(size - len(buf), 1 << 20))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


class SocketTransport(Transport):
    """One persistent TCP connection per peer pair, u32 length-prefixed frames.

    Worker ``w`` listens on ``hosts[w]``, dials every lower id and accepts
    every higher id. Worker 0 then runs a start barrier. Each connection has
    a reader thread so that sends never block on a peer that is itself busy
    sending.
    """

    def __init__(self, hosts: list[tuple[str, int]], worker_id: int,
                 timeout: float = DEFAULT_TIMEOUT, bind: str | None = None):
        super().__init__()
        self.hosts = hosts
        self.worker_id = worker_id
        self.workers = len(hosts)
        self.timeout = timeout
        self.socks: dict[int, socket.socket] = {}
        self.inbox: dict[int, queue.Queue] = {}
        self.locks: dict[int, threading.Lock] = {}
        self._closed = False
        if self.workers > 1:
            self._connect(bind or os.environ.get(BIND_ENV) or hosts[worker_id][0])
            self._barrier()

    def _connect(self, bind_host: str):
        port = self.hosts[self.worker_id][1]
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((bind_host, port))
        srv.listen(self.workers)
        srv.settimeout(self.timeout)
        deadline = time.monotonic() + self.timeout
        try:
            for peer in range(self.worker_id):
                host, pport = self.hosts[peer]
                while True:
                    try:
                        s = socket.create_connection((host, pport), timeout=5.0)
                        break
                    except OSError:
                        if time.monotonic() > deadline:
                            raise PeerDisconnected(f"cannot reach worker {peer} at {host}:{pport}")
                        time.sleep(0.05)
                s.sendall(_FRAME.pack(self.worker_id))
                self._register(peer, s)
            for _ in range(self.worker_id + 1, self.workers):
                try:
                    s, _addr = srv.accept()
                except socket.timeout:
                    raise PeerDisconnected(f"worker {self.worker_id}: peers did not connect in time")
                s.settimeout(self.timeout)
                hello = _recv_exact(s, _FRAME.size)
                if hello is None:
                    raise PeerDisconnected("peer closed during handshake")
                (peer,) = _FRAME.unpack(hello)
                if peer in self.socks or not self.worker_id < peer < self.workers:
                    raise PeerDisconnected(f"unexpected handshake from worker {peer}")
                self._register(peer, s)
        finally:
            srv.close()

    def _register(self, peer: int, s: socket.socket):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        s.settimeout(None)
        self.socks[peer] = s
        self.inbox[peer] = queue.Queue()
        self.locks[peer] = threading.Lock()
        threading.Thread(target=self._reader, args=(peer, s), daemon=True,
                         name=f"rltqap-recv-{self.worker_id}-{peer}").start()

    def _reader(self, peer: int, s: socket.socket):
        box = self.inbox[peer]
        try:
            while True:
                head = _recv_exact(s, _FRAME.size)
                if head is None:
                    break
                body = _recv_exact(s, _FRAME.unpack(head)[0])
                if body is None:
                    break
                box.put(body)
        except OSError:
            pass
        box.put(None)

    def _barrier(self):
        if self.worker_id == 0:
            for peer in self.peers:
                if self.recv(peer) != b"READY":
                    raise PhaseDesync(f"bad rendezvous frame from worker {peer}")
            for peer in self.peers:
                self.send(peer, b"GO")
        else:
            self.send(0, b"READY")
            if self.recv(0) != b"GO":
                raise PhaseDesync("bad rendezvous reply from worker 0")
        self.bytes_sent = 0

    def send(self, dest, payload):
        try:
            with self.locks[dest]:
                self.socks[dest].sendall(_FRAME.pack(len(payload)) + payload)
        except OSError as exc:
            raise PeerDisconnected(f"send to worker {dest} failed: {exc}") from exc
        self.bytes_sent += len(payload)

    def recv(self, source):
        try:
            item = self.inbox[source].get(timeout=self.timeout)
        except queue.Empty:
            raise PeerDisconnected(
                f"worker {self.worker_id}: no message from {source} within {self.timeout:.0f}s") from None
        if item is None:
            raise PeerDisconnected(f"worker {source} closed the connection")
        return item

    def abort(self):
        self.close()

    def close(self):
        if self._closed:
            return
        self._closed = True
        for s in self.socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()


def exchange(transport: Transport, phase: Phase, iteration: int,
             outgoing: dict[int, PhaseMessage], precision: int,
             n: int | None = None) -> list[PhaseMessage]:
    """All-to-all for one phase: one message to and from every peer.

    Peers without an outgoing message get an empty one. Returned messages
    are ordered by source worker.
    """
    phase = Phase(phase)
    me = transport.worker_id
    for dest in transport.peers:
        msg = outgoing.get(dest) or PhaseMessage.empty(phase, me, iteration, precision)
        transport.send(dest, encode(msg))
    incoming = []
    for src in transport.peers:
        msg = decode(transport.recv(src), precision=precision, n=n)
        if msg.source != src:
            raise PhaseDesync(f"message on channel {src}->{me} claims source {msg.source}")
        if msg.phase != phase:
            raise PhaseDesync(f"expected {phase.name} from worker {src}, got {msg.phase.name}")
        if msg.iteration != iteration:
            raise IterationMismatch(
                f"worker {src} is at iteration {msg.iteration}, worker {me} at {iteration}")
        incoming.append(msg)
    return incoming
