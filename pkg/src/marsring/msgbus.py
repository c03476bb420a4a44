"""Topic publish-subscribe bus with two interchangeable transports.

One broker core owns the subscription table, per-(sender, topic) sequence
counters, and bounded per-client delivery queues. The in-process transport
hands out client handles wired straight into that core; the TCP transport
wraps the same core in a line protocol, so both deliver byte-identical
envelope streams for the same operation sequence.

Wire protocol, one UTF-8 line per message (payload bytes are raw):

    client -> server:  HELLO <client-id>
                       SUB <topic>
                       UNSUB <topic>
                       PUB <topic> <nbytes>\\n<payload>\\n
    server -> client:  OK
                       ERR <code>
                       MSG <topic> <sender> <seq> <nbytes>\\n<payload>\\n

The first client line must be HELLO. Topic names match [a-z0-9._-] and
are at most 64 characters; names starting with "agent." address a single
agent's inbox by convention, while "team.percepts" and "team.auction"
carry team-wide traffic.
"""

from __future__ import annotations

import logging
import re
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass

log = logging.getLogger(__name__)

MAX_PAYLOAD = 64 * 1024
MAX_TOPIC = 64
DEFAULT_QUEUE_LIMIT = 4096
DEFAULT_PORT = 47610

_NAME_RE = re.compile(r"^[a-z0-9._-]+$")


class BusError(Exception):
    """Base for bus failures."""


class TopicError(BusError):
    """Malformed topic name."""


class PayloadError(BusError):
    """Payload exceeds the size limit."""


class ClientIdError(BusError):
    """Client id rejected (malformed or already connected)."""


class DisconnectedError(BusError):
    """The handle's connection is gone; no further traffic is possible."""


@dataclass(frozen=True)
class Envelope:
    topic: str
    sender: str
    seq: int
    payload: bytes


def validate_topic(name: str) -> str:
    if not isinstance(name, str) or len(name) > MAX_TOPIC or not _NAME_RE.match(name):
        raise TopicError(f"bad topic name {name!r}")
    return name


def validate_client_id(name: str) -> str:
    if not isinstance(name, str) or len(name) > MAX_TOPIC or not _NAME_RE.match(name):
        raise ClientIdError(f"bad client id {name!r}")
    return name


class _Queue:
    """Bounded FIFO for one client. Overflow closes the queue for good:
    a consumer that cannot keep up is disconnected rather than silently
    shedding messages."""

    def __init__(self, limit: int):
        self.limit = limit
        self.items: deque = deque()
        self.cond = threading.Condition()
        self.closed: str | None = None

    def put(self, item) -> None:
        with self.cond:
            if self.closed:
                return
            if len(self.items) >= self.limit:
                self.closed = "overflow"
                self.items.clear()
                self.cond.notify_all()
                return
            self.items.append(item)
            self.cond.notify()

    def get(self, timeout: float | None):
        """Next item, or None on timeout. Raises DisconnectedError once the
        queue is closed and drained."""
        with self.cond:
            if timeout is None:
                while not self.items and not self.closed:
                    self.cond.wait()
            else:
                deadline = time.monotonic() + timeout
                while not self.items and not self.closed:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self.cond.wait(remaining)
            if self.items:
                return self.items.popleft()
            if self.closed:
                raise DisconnectedError(self.closed)
            return None

    def close(self, reason: str) -> None:
        with self.cond:
            if not self.closed:
                self.closed = reason
            self.cond.notify_all()


class BrokerCore:
    """Subscriptions, sequence numbers, and delivery queues.

    All mutations happen under one lock, which is what makes the delivery
    guarantees transport-independent: a subscribe acknowledged at time t
    sees every publish that commits after t, and every publish fans out to
    each subscriber exactly once, in commit order.
    """

    def __init__(self, queue_limit: int = DEFAULT_QUEUE_LIMIT):
        self.lock = threading.Lock()
        self.queue_limit = queue_limit
        self._queues: dict[str, _Queue] = {}
        self._subs: dict[str, set[str]] = {}
        self._seq: dict[tuple[str, str], int] = {}

    def register(self, client_id: str) -> _Queue:
        validate_client_id(client_id)
        with self.lock:
            if client_id in self._queues:
                raise ClientIdError(f"client id {client_id!r} already connected")
            q = _Queue(self.queue_limit)
            self._queues[client_id] = q
            return q

    def unregister(self, client_id: str, reason: str = "closed") -> None:
        with self.lock:
            q = self._queues.pop(client_id, None)
            for members in self._subs.values():
                members.discard(client_id)
        if q is not None:
            q.close(reason)

    def subscribe(self, client_id: str, topic: str) -> None:
        validate_topic(topic)
        with self.lock:
            if client_id not in self._queues:
                raise DisconnectedError("closed")
            self._subs.setdefault(topic, set()).add(client_id)

    def unsubscribe(self, client_id: str, topic: str) -> None:
        validate_topic(topic)
        with self.lock:
            self._subs.get(topic, set()).discard(client_id)

    def publish(self, sender: str, topic: str, payload: bytes) -> int:
        validate_topic(topic)
        if not isinstance(payload, (bytes, bytearray)):
            raise PayloadError("payload must be bytes")
        if len(payload) > MAX_PAYLOAD:
            raise PayloadError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        with self.lock:
            key = (sender, topic)
            seq = self._seq.get(key, 0) + 1
            self._seq[key] = seq
            env = Envelope(topic, sender, seq, bytes(payload))
            for cid in self._subs.get(topic, ()):
                q = self._queues.get(cid)
                if q is not None:
                    q.put(env)
            return seq


# -- in-process transport ---------------------------------------------------


class InProcessBus:
    """Broker that lives inside the current process."""

    def __init__(self, queue_limit: int = DEFAULT_QUEUE_LIMIT):
        self.core = BrokerCore(queue_limit)

    def connect(self, client_id: str) -> "InProcessClient":
        queue = self.core.register(client_id)
        return InProcessClient(self.core, client_id, queue)

    def close(self) -> None:
        with self.core.lock:
            clients = list(self.core._queues)
        for cid in clients:
            self.core.unregister(cid, "server closed")


class InProcessClient:
    """Client handle bound to an in-process broker. One agent task per
    handle; the handle is not itself thread-safe."""

    def __init__(self, core: BrokerCore, client_id: str, queue: _Queue):
        self._core = core
        self.client_id = client_id
        self._queue = queue

    def subscribe(self, topic: str) -> None:
        self._core.subscribe(self.client_id, topic)

    def unsubscribe(self, topic: str) -> None:
        self._core.unsubscribe(self.client_id, topic)

    def publish(self, topic: str, payload: bytes) -> None:
        self._core.publish(self.client_id, topic, payload)

    def next_message(self, timeout: float | None = None) -> Envelope | None:
        item = self._queue.get(timeout)
        return item

    def pending(self) -> int:
        with self._queue.cond:
            return len(self._queue.items)

    def close(self) -> None:
        self._core.unregister(self.client_id)


# -- TCP transport ----------------------------------------------------------


_OK = ("OK",)


class BusServer:
    """TCP face of a broker core."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 queue_limit: int = DEFAULT_QUEUE_LIMIT):
        self.core = BrokerCore(queue_limit)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self.host, self.port = self._sock.getsockname()
        self._closing = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="bus-accept", daemon=True
        )
        self._accept_thread.start()
        log.info("bus listening on %s:%d", self.host, self.port)

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, addr = self._sock.accept()
            except OSError:
                return
            threading.Thread(
                target=self._serve_client, args=(conn,), daemon=True,
                name=f"bus-conn-{addr[1]}",
            ).start()

    def _serve_client(self, conn: socket.socket) -> None:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        reader = conn.makefile("rb")
        client_id = None
        try:
            line = reader.readline()
            parts = line.decode("utf-8", "replace").split()
            if len(parts) != 2 or parts[0] != "HELLO":
                conn.sendall(b"ERR proto\n")
                return
            client_id = parts[1]
            try:
                queue = self.core.register(client_id)
            except ClientIdError:
                conn.sendall(b"ERR id\n")
                client_id = None
                return
            writer = threading.Thread(
                target=self._write_loop, args=(conn, queue), daemon=True,
                name=f"bus-write-{client_id}",
            )
            writer.start()
            with self.core.lock:
                queue.put(_OK)
            self._command_loop(reader, client_id, queue)
        except (OSError, ValueError):
            pass
        finally:
            if client_id is not None:
                self.core.unregister(client_id)
            try:
                conn.close()
            except OSError:
                pass

    def _command_loop(self, reader, client_id: str, queue: _Queue) -> None:
        core = self.core
        while True:
            line = reader.readline()
            if not line:
                return
            parts = line.decode("utf-8", "replace").rstrip("\n").split(" ")
            cmd = parts[0]
            if cmd == "SUB" and len(parts) == 2:
                with core.lock:
                    try:
                        validate_topic(parts[1])
                        core._subs.setdefault(parts[1], set()).add(client_id)
                        queue.put(_OK)
                    except TopicError:
                        queue.put(("ERR", "topic"))
            elif cmd == "UNSUB" and len(parts) == 2:
                with core.lock:
                    try:
                        validate_topic(parts[1])
                        core._subs.get(parts[1], set()).discard(client_id)
                        queue.put(_OK)
                    except TopicError:
                        queue.put(("ERR", "topic"))
            elif cmd == "PUB" and len(parts) == 3:
                try:
                    nbytes = int(parts[2])
                except ValueError:
                    queue.put(("ERR", "proto"))
                    return
                if nbytes < 0 or nbytes > 16 * MAX_PAYLOAD:
                    # Too large to bother draining; resynchronization is
                    # hopeless anyway, drop the connection.
                    queue.put(("ERR", "size"))
                    return
                payload = reader.read(nbytes)
                tail = reader.read(1)
                if len(payload) != nbytes or tail != b"\n":
                    queue.put(("ERR", "proto"))
                    return
                topic = parts[1]
                if nbytes > MAX_PAYLOAD:
                    queue.put(("ERR", "size"))
                    continue
                with core.lock:
                    try:
                        validate_topic(topic)
                    except TopicError:
                        queue.put(("ERR", "topic"))
                        continue
                    key = (client_id, topic)
                    seq = core._seq.get(key, 0) + 1
                    core._seq[key] = seq
                    env = Envelope(topic, client_id, seq, payload)
                    for cid in core._subs.get(topic, ()):
                        q = core._queues.get(cid)
                        if q is not None:
                            q.put(env)
                    queue.put(_OK)
            elif cmd == "HELLO":
                queue.put(("ERR", "proto"))
            else:
                queue.put(("ERR", "proto"))

    def _write_loop(self, conn: socket.socket, queue: _Queue) -> None:
        try:
            while True:
                try:
                    item = queue.get(timeout=None)
                except DisconnectedError as exc:
                    if str(exc) == "overflow":
                        conn.sendall(b"ERR overflow\n")
                    return
                if item is None:
                    continue
                if isinstance(item, Envelope):
                    head = f"MSG {item.topic} {item.sender} {item.seq} {len(item.payload)}\n"
                    conn.sendall(head.encode() + item.payload + b"\n")
                elif item == _OK:
                    conn.sendall(b"OK\n")
                else:
                    conn.sendall(f"ERR {item[1]}\n".encode())
        except OSError:
            pass
        finally:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        with self.core.lock:
            clients = list(self.core._queues)
        for cid in clients:
            self.core.unregister(cid, "server closed")


class TcpBusClient:
    """Client handle speaking the line protocol to a BusServer."""

    def __init__(self, host: str, port: int, client_id: str, timeout: float = 5.0):
        validate_client_id(client_id)
        self.client_id = client_id
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("rb")
        self._send_lock = threading.Lock()
        self._replies: deque = deque()
        self._reply_cond = threading.Condition()
        self._deliveries = _Queue(limit=1 << 30)
        self._io_timeout = timeout
        self._sock.sendall(f"HELLO {client_id}\n".encode())
        self._thread = threading.Thread(
            target=self._read_loop, daemon=True, name=f"bus-client-{client_id}"
        )
        self._thread.start()
        self._wait_reply()

    def _read_loop(self) -> None:
        reason = "connection closed"
        try:
            while True:
                line = self._reader.readline()
                if not line:
                    break
                parts = line.decode("utf-8", "replace").rstrip("\n").split(" ")
                if parts[0] == "MSG" and len(parts) == 5:
                    nbytes = int(parts[4])
                    payload = self._reader.read(nbytes)
                    self._reader.read(1)
                    self._deliveries.put(Envelope(parts[1], parts[2], int(parts[3]), payload))
                elif parts[0] in ("OK", "ERR"):
                    with self._reply_cond:
                        self._replies.append(parts)
                        self._reply_cond.notify()
                    if parts[0] == "ERR" and len(parts) > 1 and parts[1] in ("overflow", "id"):
                        reason = parts[1]
                        break
        except (OSError, ValueError, IndexError):
            pass
        finally:
            self._deliveries.close(reason)
            with self._reply_cond:
                self._replies.append(("ERR", "gone"))
                self._reply_cond.notify_all()
            try:
                self._sock.close()
            except OSError:
                pass

    def _wait_reply(self) -> None:
        deadline = time.monotonic() + self._io_timeout
        with self._reply_cond:
            while not self._replies:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise DisconnectedError("no reply from bus")
                self._reply_cond.wait(remaining)
            reply = self._replies.popleft()
        if reply[0] == "OK":
            return
        code = reply[1] if len(reply) > 1 else "proto"
        if code == "topic":
            raise TopicError("rejected by bus")
        if code == "size":
            raise PayloadError("rejected by bus")
        if code == "id":
            raise ClientIdError("client id already connected")
        raise DisconnectedError(code)

    def _request(self, line: str) -> None:
        with self._send_lock:
            try:
                self._sock.sendall(line.encode())
            except OSError as exc:
                raise DisconnectedError(str(exc)) from None
        self._wait_reply()

    def subscribe(self, topic: str) -> None:
        validate_topic(topic)
        self._request(f"SUB {topic}\n")

    def unsubscribe(self, topic: str) -> None:
        validate_topic(topic)
        self._request(f"UNSUB {topic}\n")

    def publish(self, topic: str, payload: bytes) -> None:
        validate_topic(topic)
        if len(payload) > MAX_PAYLOAD:
            raise PayloadError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        with self._send_lock:
            try:
                self._sock.sendall(f"PUB {topic} {len(payload)}\n".encode() + payload + b"\n")
            except OSError as exc:
                raise DisconnectedError(str(exc)) from None
        self._wait_reply()

    def next_message(self, timeout: float | None = None) -> Envelope | None:
        return self._deliveries.get(timeout)

    def pending(self) -> int:
        with self._deliveries.cond:
            return len(self._deliveries.items)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def connect_tcp(host: str, port: int, client_id: str, timeout: float = 5.0) -> TcpBusClient:
    return TcpBusClient(host, port, client_id, timeout)
