"""Length-prefixed TCP bridge between brokers in different processes.

Each frame on the socket is a 4-byte little-endian length followed by one message in
the io wire encoding. The server sends a Heartbeat every second.
"""
from __future__ import annotations

import logging
import socket
import struct
import threading
import time

from ..errors import NeuroStreamError
from ..io import Heartbeat, message_decode, message_encode
from .broker import Broker, Closed

log = logging.getLogger(__name__)

_LEN = struct.Struct("<I")
HEARTBEAT_S = 1.0
MAX_MESSAGE = 64 * 1024 * 1024


def send_message(sock: socket.socket, msg):
    payload = message_encode(msg)
    sock.sendall(_LEN.pack(len(payload)) + payload)


def _recv_exact(sock, n, idle_ok=False):
    """Read exactly n bytes. With ``idle_ok`` a socket timeout may escape before the first byte;
    once a message has started, timeouts are retried so the framing never desynchronises."""
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except socket.timeout:
            if idle_ok and not buf:
                raise
            continue
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf.extend(chunk)
    return bytes(buf)


def recv_message(sock: socket.socket):
    """Next message; raises socket.timeout only if nothing arrived at all."""
    (n,) = _LEN.unpack(_recv_exact(sock, _LEN.size, idle_ok=True))
    if n > MAX_MESSAGE:
        raise ConnectionError(f"message of {n} bytes exceeds limit")
    return message_decode(_recv_exact(sock, n))


class TcpPublisher:
    """Serves one broker topic to any number of TCP clients."""

    def __init__(self, broker: Broker, topic: str, host: str = "127.0.0.1", port: int = 0,
                 heartbeat: float = HEARTBEAT_S):
        self.broker = broker
        self.topic = topic
        self.heartbeat = heartbeat
        self._server = socket.create_server((host, port))
        self._server.settimeout(0.1)
        self.address = self._server.getsockname()
        self._clients: list[socket.socket] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._sub = broker.subscribe(topic, depth=256)
        self.sent = 0
        self._threads = [
            threading.Thread(target=self._accept_loop, daemon=True, name="tcp-accept"),
            threading.Thread(target=self._forward_loop, daemon=True, name="tcp-forward"),
        ]

    @property
    def port(self) -> int:
        return self.address[1]

    def start(self):
        for t in self._threads:
            t.start()
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._clients.append(conn)

    def _broadcast(self, msg):
        with self._lock:
            for c in list(self._clients):
                try:
                    send_message(c, msg)
                except OSError:
                    self._clients.remove(c)
                    c.close()

    def _forward_loop(self):
        counter = 0
        next_beat = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if now >= next_beat:
                self._broadcast(Heartbeat(time.monotonic_ns(), counter))
                counter += 1
                next_beat += self.heartbeat
            try:
                msg = self._sub.get(timeout=max(0.0, min(0.05, next_beat - now)))
            except Closed:
                break
            if msg is not None:
                self._broadcast(msg)
                self.sent += 1

    def close(self):
        self._stop.set()
        self._sub.close()
        for t in self._threads:
            if t.is_alive():
                t.join(1.0)
        self._server.close()
        with self._lock:
            for c in self._clients:
                c.close()
            self._clients.clear()


class TcpSubscriber:
    """Connects to a TcpPublisher and republishes what it receives on a local topic."""

    def __init__(self, broker: Broker, host: str, port: int, topic: str):
        self.broker = broker
        self.topic = topic
        self._sock = socket.create_connection((host, port))
        self._sock.settimeout(0.2)
        self.heartbeats = 0
        self.last_heartbeat = None
        self.received = 0
        self.error = None
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True, name="tcp-subscriber")

    def start(self):
        self._thread.start()
        return self

    def _loop(self):
        while not self._stop.is_set():
            try:
                msg = recv_message(self._sock)
            except socket.timeout:
                continue
            except (OSError, NeuroStreamError) as exc:
                if not self._stop.is_set():
                    self.error = exc
                break
            if isinstance(msg, Heartbeat):
                self.heartbeats += 1
                self.last_heartbeat = msg
                continue
            self.broker.publish(self.topic, msg)
            self.received += 1

    def close(self):
        self._stop.set()
        self._thread.join(1.0)
        self._sock.close()
