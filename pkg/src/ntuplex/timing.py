"""Scoped timers that attribute time to the compute side of a task.

Decompression, decoding, expression evaluation and aggregator fills wrap
their work in :func:`cpu_section`. When a :class:`TaskClock` is active in the
current context the elapsed time is added to it; otherwise the sections cost
one context-variable lookup. Nested sections count once.
"""

from __future__ import annotations

import contextlib
import contextvars
import time

_active: contextvars.ContextVar[TaskClock | None] = contextvars.ContextVar(
    "ntuplex_task_clock", default=None
)


class TaskClock:
    def __init__(self):
        self.cpu_time = 0.0
        self._depth = 0

    @contextlib.contextmanager
    def activate(self):
        token = _active.set(self)
        try:
            yield self
        finally:
            _active.reset(token)


@contextlib.contextmanager
def cpu_section():
    clock = _active.get()
    if clock is None or clock._depth:
        if clock is not None:
            clock._depth += 1
            try:
                yield
            finally:
                clock._depth -= 1
        else:
            yield
        return
    clock._depth = 1
    start = time.perf_counter()
    try:
        yield
    finally:
        clock.cpu_time += time.perf_counter() - start
        clock._depth = 0
