"""Minimal byte-range file access over TCP.

A storage server exports one directory tree; clients open files and issue
positional reads, so NTF readers work unchanged on remote data through
:class:`RemoteSource`. Remote files are addressed as ``ntx://host:port/path``.

Wire format, little-endian. Every frame is::

    length u32 | code u8 | request_id u32 | payload

where ``length`` counts the code, the request id and the payload (so it is
``5 + len(payload)``) and payloads are at most 16 MiB. In requests ``code`` is
the opcode, in responses the status.

=========  ==============================  ===============================
opcode     request payload                 OK response payload
=========  ==============================  ===============================
1 OPEN     u16 n, n bytes UTF-8 path       u32 handle, u64 size
2 READ     u32 handle, u64 offset, u32 n   up to n bytes from offset
3 STAT     u16 n, path                     u64 size
4 CLOSE    u32 handle                      empty
5 LIST     u16 n, path                     u32 count, then per entry
                                           u8 is_dir, u64 size, u16 n, name
=========  ==============================  ===============================

Status 0 is OK; errors carry a UTF-8 message. Reads past the end of a file
are short (possibly empty), never errors. Paths are relative to the
exported root and may not escape it.
"""

from __future__ import annotations

import collections
import enum
import logging
import os
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass
from urllib.parse import urlsplit

from .errors import RemoteError, UserInputError
from .eventfmt.sources import REMOTE_SCHEME, ByteSource

log = logging.getLogger(__name__)

MAX_PAYLOAD = 16 * 1024 * 1024
FRAME_HEADER = struct.Struct("<IBI")
_PREFIX = struct.Struct("<BI")
_READ_REQ = struct.Struct("<IQI")
_OPEN_OK = struct.Struct("<IQ")


class Op(enum.IntEnum):
    OPEN = 1
    READ = 2
    STAT = 3
    CLOSE = 4
    LIST = 5


class Status(enum.IntEnum):
    OK = 0
    NOT_FOUND = 1
    ACCESS_DENIED = 2
    BAD_HANDLE = 3
    PROTOCOL_ERROR = 4
    IO_ERROR = 5


@dataclass(frozen=True)
class Frame:
    code: int
    request_id: int
    payload: bytes = b""


class ProtocolError(RemoteError):
    pass


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    return FRAME_HEADER.pack(_PREFIX.size + len(frame.payload), frame.code, frame.request_id) + frame.payload


def decode_frame(buf: bytes) -> tuple[Frame, int]:
    """Decode one frame from the start of ``buf``; returns it and the bytes consumed."""
    if len(buf) < FRAME_HEADER.size:
        raise ProtocolError("incomplete frame header")
    length, code, request_id = FRAME_HEADER.unpack_from(buf)
    if length < _PREFIX.size or length - _PREFIX.size > MAX_PAYLOAD:
        raise ProtocolError(f"invalid frame length {length}")
    end = 4 + length
    if len(buf) < end:
        raise ProtocolError("incomplete frame payload")
    return Frame(code, request_id, bytes(buf[FRAME_HEADER.size:end])), end


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks, remaining = [], n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            if remaining == n:
                return None
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _pack_path(path: str) -> bytes:
    raw = path.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise UserInputError("path too long")
    return struct.pack("<H", len(raw)) + raw


def _unpack_path(payload: bytes) -> str:
    if len(payload) < 2:
        raise ValueError("missing path length")
    (n,) = struct.unpack_from("<H", payload)
    if len(payload) != 2 + n:
        raise ValueError("path length does not match payload")
    path = payload[2:].decode("utf-8")
    if "\0" in path:
        raise ValueError("path contains NUL")
    return path


# -- server -----------------------------------------------------------------


class _Reply(Exception):
    def __init__(self, status: Status, message: str):
        super().__init__(message)
        self.status = status


class _Handler(socketserver.BaseRequestHandler):
    server: _TCPServer

    def setup(self):
        self.handles: dict[int, tuple[int, str]] = {}
        self.next_handle = 1
        with self.server.lock:
            self.server.connections.add(self.request)

    def finish(self):
        with self.server.lock:
            self.server.connections.discard(self.request)
        for fd, _ in self.handles.values():
            os.close(fd)
        self.handles.clear()

    def handle(self):
        sock = self.request
        while True:
            try:
                head = _recv_exact(sock, 4)
                if head is None:
                    return
                (length,) = struct.unpack("<I", head)
                if length < _PREFIX.size:
                    _recv_exact(sock, length)
                    self._send(sock, Frame(Status.PROTOCOL_ERROR, 0, f"invalid frame length {length}".encode()))
                    continue
                prefix = _recv_exact(sock, _PREFIX.size)
                if prefix is None:
                    return
                code, request_id = _PREFIX.unpack(prefix)
                body_len = length - _PREFIX.size
                if body_len > MAX_PAYLOAD:
                    self._discard(sock, body_len)
                    reply = Frame(Status.PROTOCOL_ERROR, request_id, b"payload exceeds 16 MiB")
                else:
                    payload = _recv_exact(sock, body_len) if body_len else b""
                    if payload is None:
                        return
                    reply = self._dispatch(code, request_id, payload)
                self._send(sock, reply)
            except (ConnectionError, OSError):
                return

    @staticmethod
    def _discard(sock, n):
        while n:
            chunk = _recv_exact(sock, min(n, 1 << 20))
            if chunk is None:
                raise ConnectionError("connection closed mid-frame")
            n -= len(chunk)

    @staticmethod
    def _send(sock, frame: Frame):
        sock.sendall(encode_frame(frame))

    def _dispatch(self, code: int, request_id: int, payload: bytes) -> Frame:
        try:
            try:
                op = Op(code)
            except ValueError:
                raise _Reply(Status.PROTOCOL_ERROR, f"unknown opcode {code}") from None
            self.server.stats[op.name] += 1
            body = getattr(self, f"_op_{op.name.lower()}")(payload)
            return Frame(Status.OK, request_id, body)
        except _Reply as reply:
            return Frame(reply.status, request_id, str(reply).encode("utf-8"))
        except (ValueError, struct.error, UnicodeDecodeError) as exc:
            return Frame(Status.PROTOCOL_ERROR, request_id, f"malformed request: {exc}".encode())
        except OSError as exc:
            return Frame(Status.IO_ERROR, request_id, str(exc).encode("utf-8", "replace"))

    def _resolve(self, path: str) -> str:
        root = self.server.root
        full = os.path.realpath(os.path.join(root, path.lstrip("/")))
        if full != root and not full.startswith(root + os.sep):
            raise _Reply(Status.ACCESS_DENIED, f"{path}: outside the exported root")
        return full

    def _open_file(self, path: str) -> tuple[int, int]:
        full = self._resolve(path)
        if not os.path.isfile(full):
            raise _Reply(Status.NOT_FOUND, f"{path}: no such file")
        fd = os.open(full, os.O_RDONLY)
        return fd, os.fstat(fd).st_size

    def _op_open(self, payload: bytes) -> bytes:
        path = _unpack_path(payload)
        fd, size = self._open_file(path)
        handle = self.next_handle
        self.next_handle += 1
        self.handles[handle] = (fd, path)
        return _OPEN_OK.pack(handle, size)

    def _op_read(self, payload: bytes) -> bytes:
        handle, offset, length = _READ_REQ.unpack(payload)
        if handle not in self.handles:
            raise _Reply(Status.BAD_HANDLE, f"unknown handle {handle}")
        if length > MAX_PAYLOAD:
            raise _Reply(Status.PROTOCOL_ERROR, f"read length {length} exceeds {MAX_PAYLOAD}")
        if self.server.read_latency:
            time.sleep(self.server.read_latency)
        fd, _ = self.handles[handle]
        chunks = []
        while length:
            chunk = os.pread(fd, length, offset)
            if not chunk:
                break
            chunks.append(chunk)
            offset += len(chunk)
            length -= len(chunk)
        return b"".join(chunks)

    def _op_stat(self, payload: bytes) -> bytes:
        full = self._resolve(_unpack_path(payload))
        if not os.path.isfile(full):
            raise _Reply(Status.NOT_FOUND, "no such file")
        return struct.pack("<Q", os.path.getsize(full))

    def _op_close(self, payload: bytes) -> bytes:
        (handle,) = struct.unpack("<I", payload)
        entry = self.handles.pop(handle, None)
        if entry is None:
            raise _Reply(Status.BAD_HANDLE, f"unknown handle {handle}")
        os.close(entry[0])
        return b""

    def _op_list(self, payload: bytes) -> bytes:
        full = self._resolve(_unpack_path(payload))
        if not os.path.isdir(full):
            raise _Reply(Status.NOT_FOUND, "no such directory")
        out = []
        names = sorted(os.listdir(full))
        for name in names:
            p = os.path.join(full, name)
            is_dir = os.path.isdir(p)
            raw = name.encode("utf-8", "surrogateescape")
            out.append(struct.pack("<BQH", is_dir, 0 if is_dir else os.path.getsize(p), len(raw)) + raw)
        return struct.pack("<I", len(out)) + b"".join(out)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    block_on_close = False

    def __init__(self, address, root: str, read_latency: float):
        self.root = os.path.realpath(root)
        self.read_latency = read_latency
        self.stats: collections.Counter = collections.Counter()
        self.connections: set = set()
        self.lock = threading.Lock()
        super().__init__(address, _Handler)

    def drop_connections(self) -> None:
        with self.lock:
            live = list(self.connections)
        for sock in live:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class StorageServer:
    """A running server. Use :func:`serve` to start one in a background thread."""

    def __init__(self, root_dir, address=("127.0.0.1", 0), read_latency: float = 0.0):
        if not os.path.isdir(root_dir):
            raise UserInputError(f"{root_dir}: not a directory")
        self._server = _TCPServer(tuple(address), os.fspath(root_dir), read_latency)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def stats(self) -> collections.Counter:
        """Requests handled so far, by opcode name."""
        return self._server.stats

    def url(self, path: str = "") -> str:
        host, port = self.address
        return f"{REMOTE_SCHEME}{host}:{port}/{path.lstrip('/')}"

    def start(self) -> StorageServer:
        self._thread = threading.Thread(target=self._server.serve_forever, name="ntx-server", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        """Stop accepting connections and drop the ones still open."""
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()
        self._server.drop_connections()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(root_dir, address=("127.0.0.1", 0), read_latency: float = 0.0) -> StorageServer:
    """Export ``root_dir`` on ``address`` from a background thread.

    ``read_latency`` adds an artificial delay (seconds) to every READ.
    """
    server = StorageServer(root_dir, address, read_latency).start()
    log.info("serving %s on %s:%d", root_dir, *server.address)
    return server


# -- client -----------------------------------------------------------------


@dataclass(frozen=True)
class RemoteHandle:
    handle_id: int
    file_size: int
    path: str


@dataclass(frozen=True)
class ListEntry:
    name: str
    is_dir: bool
    size: int


class RemoteClient:
    """One connection; requests are issued one at a time.

    ``round_trips`` counts completed requests by opcode name.
    """

    def __init__(self, host: str, port: int, timeout: float | None = 60.0):
        self.host, self.port = host, int(port)
        try:
            self._sock = socket.create_connection((host, self.port), timeout=timeout)
        except OSError as exc:
            raise RemoteError(f"cannot connect to {host}:{port}: {exc}") from None
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()
        self._next_id = 1
        self.round_trips: collections.Counter = collections.Counter()

    def _call(self, op: Op, payload: bytes) -> bytes:
        with self._lock:
            request_id = self._next_id
            self._next_id = (self._next_id + 1) & 0xFFFFFFFF
            try:
                self._sock.sendall(encode_frame(Frame(op, request_id, payload)))
                head = _recv_exact(self._sock, FRAME_HEADER.size)
                if head is None:
                    raise ConnectionError("server closed the connection")
                length, status, reply_id = FRAME_HEADER.unpack(head)
                if length < _PREFIX.size or length - _PREFIX.size > MAX_PAYLOAD:
                    raise ProtocolError(f"invalid response length {length}")
                body = _recv_exact(self._sock, length - _PREFIX.size) or b""
            except OSError as exc:
                raise RemoteError(f"connection to {self.host}:{self.port} lost: {exc}") from None
            self.round_trips[op.name] += 1
        if reply_id != request_id:
            raise ProtocolError(f"response id {reply_id} does not match request {request_id}")
        if status != Status.OK:
            try:
                name = Status(status).name
            except ValueError:
                name = f"status {status}"
            raise RemoteError(f"{name}: {body.decode('utf-8', 'replace')}", status=status)
        return body

    def open(self, path: str) -> RemoteHandle:
        handle, size = _OPEN_OK.unpack(self._call(Op.OPEN, _pack_path(path)))
        return RemoteHandle(handle, size, path)

    def read_at(self, handle: RemoteHandle | int, offset: int, length: int) -> bytes:
        if length > MAX_PAYLOAD:
            raise UserInputError(f"read length {length} exceeds {MAX_PAYLOAD}")
        hid = handle.handle_id if isinstance(handle, RemoteHandle) else handle
        return self._call(Op.READ, _READ_REQ.pack(hid, offset, length))

    def stat(self, path: str) -> int:
        (size,) = struct.unpack("<Q", self._call(Op.STAT, _pack_path(path)))
        return size

    def close(self, handle: RemoteHandle | int) -> None:
        hid = handle.handle_id if isinstance(handle, RemoteHandle) else handle
        self._call(Op.CLOSE, struct.pack("<I", hid))

    def list(self, path: str = "") -> list[ListEntry]:
        body = self._call(Op.LIST, _pack_path(path))
        (count,) = struct.unpack_from("<I", body)
        pos, out = 4, []
        for _ in range(count):
            is_dir, size, n = struct.unpack_from("<BQH", body, pos)
            pos += 11
            out.append(ListEntry(body[pos:pos + n].decode("utf-8", "surrogateescape"), bool(is_dir), size))
            pos += n
        return out

    def disconnect(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.disconnect()


def parse_url(url: str) -> tuple[str, int, str]:
    parts = urlsplit(url)
    if parts.scheme + "://" != REMOTE_SCHEME or not parts.hostname or parts.port is None:
        raise UserInputError(f"not a remote URL (expected {REMOTE_SCHEME}host:port/path): {url!r}")
    return parts.hostname, parts.port, parts.path.lstrip("/")


class RemoteSource(ByteSource):
    """A remote file as a :class:`ByteSource`.

    The byte counter sees every payload byte received from the server. With
    ``readahead`` > 0, a read shorter than that many bytes fetches a block of
    ``readahead`` bytes and later reads inside the block are served locally;
    the default is no readahead and no caching.
    """

    def __init__(self, client: RemoteClient, path: str, readahead: int = 0, owns_client: bool = False):
        super().__init__()
        self.client = client
        self.path = path
        self.name = f"{REMOTE_SCHEME}{client.host}:{client.port}/{path}"
        self.readahead = int(readahead)
        self._owns_client = owns_client
        self._cache_start, self._cache = 0, b""
        try:
            self.handle = client.open(path)
        except RemoteError as exc:
            if owns_client:
                client.disconnect()
            raise RemoteError(f"{self.name}: {exc}", exc.status) from None
        self.size = self.handle.file_size

    def _fetch(self, offset: int, length: int) -> bytes:
        chunks = []
        try:
            while length > 0:
                chunk = self.client.read_at(self.handle, offset, min(length, MAX_PAYLOAD))
                if not chunk:
                    break
                chunks.append(chunk)
                offset += len(chunk)
                length -= len(chunk)
        except RemoteError as exc:
            raise RemoteError(f"{self.name}: {exc}", exc.status) from None
        return b"".join(chunks)

    def _pread(self, offset: int, length: int) -> bytes:
        return self._fetch(offset, length)

    def read_at(self, offset: int, length: int) -> bytes:
        if not self.readahead:
            return super().read_at(offset, length)
        if offset < 0 or length < 0:
            raise ValueError("offset and length must be non-negative")
        start, cache = self._cache_start, self._cache
        if start <= offset and offset + length <= start + len(cache):
            return cache[offset - start:offset - start + length]
        data = self._fetch(offset, max(length, self.readahead))
        self.counter.add(len(data))
        self._cache_start, self._cache = offset, data
        return data[:length]

    def close(self) -> None:
        try:
            self.client.close(self.handle)
        except RemoteError:
            pass
        if self._owns_client:
            self.client.disconnect()


def open_remote(url: str, readahead: int = 0) -> RemoteSource:
    host, port, path = parse_url(url)
    return RemoteSource(RemoteClient(host, port), path, readahead, owns_client=True)
