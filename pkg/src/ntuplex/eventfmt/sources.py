"""Positional byte sources with exact read accounting.

Everything that reads NTF data goes through :meth:`ByteSource.read_at`, so
the counter attached to a source sees every byte transferred. Local files
use ``os.pread`` and are safe to share between threads.
"""

from __future__ import annotations

import os
import threading


class ByteCounter:
    """Running total of bytes transferred and read calls issued; thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes = 0
        self.reads = 0

    def add(self, nbytes: int) -> None:
        with self._lock:
            self.bytes += nbytes
            self.reads += 1

    def reset(self) -> None:
        with self._lock:
            self.bytes = 0
            self.reads = 0

    def __repr__(self) -> str:
        return f"ByteCounter(bytes={self.bytes}, reads={self.reads})"


class ByteSource:
    """Random-access, read-only view of one file.

    Subclasses implement ``_pread``. Short reads at end of file are normal;
    offsets past the end return ``b""``.
    """

    name = "<source>"
    size = 0

    def __init__(self):
        self.counter = ByteCounter()

    def read_at(self, offset: int, length: int) -> bytes:
        if offset < 0 or length < 0:
            raise ValueError("offset and length must be non-negative")
        data = self._pread(offset, length)
        self.counter.add(len(data))
        return data

    def _pread(self, offset: int, length: int) -> bytes:
        raise NotImplementedError

    @property
    def bytes_read(self) -> int:
        return self.counter.bytes

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class FileSource(ByteSource):
    def __init__(self, path: str | os.PathLike):
        super().__init__()
        self.name = os.fspath(path)
        self._fd = os.open(self.name, os.O_RDONLY | getattr(os, "O_BINARY", 0))
        self.size = os.fstat(self._fd).st_size

    def _pread(self, offset: int, length: int) -> bytes:
        if offset >= self.size or length == 0:
            return b""
        chunks = []
        while length > 0:
            chunk = os.pread(self._fd, length, offset)
            if not chunk:
                break
            chunks.append(chunk)
            offset += len(chunk)
            length -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None


class BytesSource(ByteSource):
    """In-memory source, mostly for tests and for data already fetched."""

    def __init__(self, data: bytes, name: str = "<memory>"):
        super().__init__()
        self._data = memoryview(bytes(data))
        self.size = len(self._data)
        self.name = name

    def _pread(self, offset: int, length: int) -> bytes:
        return bytes(self._data[offset:offset + length])


REMOTE_SCHEME = "ntx://"


def is_remote(target) -> bool:
    return isinstance(target, str) and target.startswith(REMOTE_SCHEME)


def open_source(target) -> ByteSource:
    """Open a local path, an ``ntx://host:port/path`` URL, or pass a source through."""
    if isinstance(target, ByteSource):
        return target
    if is_remote(target):
        from ..remotefs import open_remote

        return open_remote(target)
    return FileSource(target)


def bytes_read_accounting(source: ByteSource) -> ByteCounter:
    return source.counter
