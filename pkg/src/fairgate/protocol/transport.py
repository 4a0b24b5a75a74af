"""Message transports: an in-process channel pair and a TCP socket.

Both move framed bytes, keep a transcript of every message, and can
optionally retain the raw bytes received (for confidentiality audits).
"""

from __future__ import annotations

import json
import queue
import socket
import time
from dataclasses import asdict, dataclass

from .messages import CRC, DEFAULT_MAX_PAYLOAD, HEADER, Message, frame_decode, frame_encode, parse_header


class TransportError(ConnectionError):
    pass


class ConnectionClosed(TransportError):
    pass


@dataclass(frozen=True)
class TranscriptRecord:
    direction: str  # "send" | "recv"
    kind: str
    round: int
    digest: str
    size: int


class Transport:
    """Base class: subclasses move frames with ``_send_bytes`` / ``_recv_bytes``."""

    def __init__(self, keep_received: bool = False, max_payload: int = DEFAULT_MAX_PAYLOAD,
                 timeout: float | None = 600.0):
        self.transcript: list[TranscriptRecord] = []
        self.headers: list[tuple[str, Message]] = []  # messages minus blobs, for FSM replay
        self.keep_received = keep_received
        self.received = bytearray()
        self.max_payload = max_payload
        self.timeout = timeout

    def send(self, msg: Message) -> None:
        frame = frame_encode(msg, self.max_payload)
        self._send_bytes(frame)
        self._log("send", msg, len(frame))

    def recv(self) -> Message:
        frame = self._recv_bytes()
        if self.keep_received:
            self.received += frame
        msg = frame_decode(frame, self.max_payload)
        self._log("recv", msg, len(frame))
        return msg

    def _log(self, direction: str, msg: Message, size: int) -> None:
        self.transcript.append(TranscriptRecord(direction, msg.kind.title, msg.round, msg.digest(), size))
        self.headers.append((direction, Message(msg.kind, msg.round, msg.meta)))

    def transcript_lines(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.transcript)

    def close(self) -> None:
        pass

    def _send_bytes(self, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self) -> bytes:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_CLOSED = object()


class InProcessTransport(Transport):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, **kw):
        super().__init__(**kw)
        self._inbox, self._outbox = inbox, outbox
        self._closed = False

    def _send_bytes(self, frame: bytes) -> None:
        if self._closed:
            raise ConnectionClosed("transport is closed")
        self._outbox.put(frame)

    def _recv_bytes(self) -> bytes:
        try:
            item = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for a message") from None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ConnectionClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


def channel_pair(**kw) -> tuple[InProcessTransport, InProcessTransport]:
    """Two connected in-process endpoints (e.g. Comp side, ML side)."""
    a, b = queue.Queue(), queue.Queue()
    return InProcessTransport(a, b, **kw), InProcessTransport(b, a, **kw)


class TcpTransport(Transport):
    def __init__(self, sock: socket.socket, **kw):
        super().__init__(**kw)
        self.sock = sock
        self.sock.settimeout(self.timeout)

    @classmethod
    def listen(cls, host: str, port: int, accept_timeout: float | None = 600.0, on_bound=None, **kw) -> "TcpTransport":
        """Accept exactly one peer.  ``on_bound(port)`` is called once listening."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            srv.bind((host, port))
            srv.listen(1)
            if on_bound is not None:
                on_bound(srv.getsockname()[1])
            srv.settimeout(accept_timeout)
            try:
                conn, _ = srv.accept()
            except socket.timeout:
                raise TransportError("no peer connected before the timeout") from None
        except OSError as exc:
            if isinstance(exc, TransportError):
                raise
            raise TransportError(f"cannot listen on {host}:{port}: {exc}") from exc
        finally:
            srv.close()
        return cls(conn, **kw)

    @classmethod
    def connect(cls, host: str, port: int, retry_for: float = 0.0, **kw) -> "TcpTransport":
        """Connect, retrying for up to ``retry_for`` seconds while the peer starts."""
        deadline = time.monotonic() + retry_for
        while True:
            try:
                return cls(socket.create_connection((host, port), timeout=10.0), **kw)
            except OSError as exc:
                if time.monotonic() >= deadline:
                    raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
                time.sleep(0.1)

    def _send_bytes(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionClosed(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            except socket.timeout:
                raise TransportError("timed out waiting for data") from None
            except OSError as exc:
                raise ConnectionClosed(f"receive failed: {exc}") from exc
            if not chunk:
                raise ConnectionClosed("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def _recv_bytes(self) -> bytes:
        head = self._read_exact(HEADER.size)
        _, _, length = parse_header(head, self.max_payload)
        return head + self._read_exact(length + CRC.size)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
