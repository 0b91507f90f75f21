"""Parallel map-reduce analysis runner with per-task metrics.

Input files are partitioned into tasks, each task fills one aggregator on a
worker, and the coordinator merges the partial results in ascending task
order. Every task records its wall time, the time spent in compute code
(decompression, decoding, expression evaluation, filling; see
:mod:`ntuplex.timing`) and the bytes it read. Read time is wall time minus
compute time, at task level and for the run totals.
"""

from __future__ import annotations

import csv
import enum
import glob
import heapq
import io
import logging
import math
import os
import time
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .aggregate import (
    AggregatorSpec,
    check_spec,
    deserialize,
    fill_batch,
    merge,
    serialize,
    spec_fields,
    zero,
)
from .errors import NtuplexError, TaskFailedError, UserInputError
from .eventfmt import is_remote, open_source, read_events, read_schema
from .expr import Expr, parse_expr
from .timing import TaskClock

log = logging.getLogger(__name__)


class Strategy(enum.Enum):
    EQUAL_COUNT = "equal"
    LPT = "lpt"

    @classmethod
    def parse(cls, value) -> Strategy:
        if isinstance(value, Strategy):
            return value
        aliases = {"equal": cls.EQUAL_COUNT, "equalcount": cls.EQUAL_COUNT, "equal_count": cls.EQUAL_COUNT,
                   "lpt": cls.LPT, "sizebalancedlpt": cls.LPT, "size_balanced_lpt": cls.LPT}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise UserInputError(f"unknown partition strategy {value!r} (expected equal or lpt)") from None


@dataclass(frozen=True)
class InputFile:
    path: str
    size: int


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    files: tuple[InputFile, ...]
    spec: AggregatorSpec | None = None
    predicate: Expr | None = None
    branches: tuple[str, ...] = ()

    @property
    def load(self) -> int:
        return sum(f.size for f in self.files)


def _as_input(f) -> InputFile:
    if isinstance(f, InputFile):
        return f
    path, size = f
    return InputFile(str(path), int(size))


def partition(
    files: Iterable,
    n_tasks: int,
    strategy: Strategy | str = Strategy.EQUAL_COUNT,
    *,
    spec: AggregatorSpec | None = None,
    predicate: Expr | str | None = None,
    branches: Sequence[str] = (),
) -> list[TaskSpec]:
    """Assign ``(path, size)`` files to ``n_tasks`` tasks.

    ``EQUAL_COUNT`` deals files round-robin in input order. ``LPT`` takes
    files largest first (ties keep input order) and gives each to the task
    with the smallest total so far (ties go to the lowest task id).
    """
    files = [_as_input(f) for f in files]
    if isinstance(n_tasks, bool) or not isinstance(n_tasks, int) or n_tasks < 1:
        raise UserInputError(f"n_tasks must be a positive integer, got {n_tasks!r}")
    if not files:
        raise UserInputError("no input files to partition")
    strategy = Strategy.parse(strategy)
    buckets: list[list[InputFile]] = [[] for _ in range(n_tasks)]
    if strategy is Strategy.EQUAL_COUNT:
        for i, f in enumerate(files):
            buckets[i % n_tasks].append(f)
    else:
        heap = [(0, t) for t in range(n_tasks)]
        for f in sorted(files, key=lambda f: -f.size):
            load, t = heapq.heappop(heap)
            buckets[t].append(f)
            heapq.heappush(heap, (load + f.size, t))
    if isinstance(predicate, str):
        predicate = parse_expr(predicate)
    return [TaskSpec(t, tuple(b), spec, predicate, tuple(branches)) for t, b in enumerate(buckets)]


def task_loads(plan: Sequence[TaskSpec]) -> list[int]:
    return [t.load for t in plan]


def makespan(plan: Sequence[TaskSpec]) -> int:
    """Largest task load, i.e. completion time when cost is proportional to bytes."""
    return max(task_loads(plan))


# -- metrics ----------------------------------------------------------------


@dataclass
class TaskMetrics:
    task_id: int
    wall_time: float
    cpu_time: float
    read_time: float | None = None
    bytes_read: int = 0
    events_processed: int = 0
    n_files: int = 1
    start_s: float = 0.0
    end_s: float | None = None

    def __post_init__(self):
        if self.read_time is None:
            self.read_time = max(0.0, self.wall_time - self.cpu_time)
        if self.end_s is None:
            self.end_s = self.start_s + self.wall_time

    @property
    def throughput(self) -> float | None:
        return throughput(self)


def throughput(metrics: TaskMetrics) -> float | None:
    """Bytes read per second of read time.

    Zero when nothing was read; ``None`` when bytes were read in no measurable
    read time.
    """
    if metrics.bytes_read == 0:
        return 0.0
    if metrics.read_time is None or metrics.read_time <= 0:
        return None
    return metrics.bytes_read / metrics.read_time


@dataclass(frozen=True)
class TimelineRow:
    task_id: int
    start_s: float
    end_s: float
    wall_s: float
    bytes: int


@dataclass(frozen=True)
class StragglerReport:
    p50: float
    p95: float
    max: float
    tail_ratio: float
    timeline: tuple[TimelineRow, ...] = ()

    def timeline_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task_id", "start_s", "end_s", "wall_s", "bytes"])
        for r in self.timeline:
            w.writerow([r.task_id, repr(r.start_s), repr(r.end_s), repr(r.wall_s), r.bytes])
        return buf.getvalue()


def straggler_report(report: RunReport) -> StragglerReport:
    """Wall-time percentiles, tail ratio (max / median) and Gantt rows.

    Tasks that were assigned no files are left out of the statistics; a zero
    median gives a tail ratio of 1.
    """
    timeline = tuple(
        TimelineRow(m.task_id, m.start_s, m.end_s, m.wall_time, m.bytes_read)
        for m in sorted(report.tasks, key=lambda m: m.task_id)
    )
    walls = np.array([m.wall_time for m in report.tasks if m.n_files > 0], dtype=np.float64)
    if len(walls) == 0:
        return StragglerReport(0.0, 0.0, 0.0, 1.0, timeline)
    p50, p95 = (float(v) for v in np.percentile(walls, [50, 95]))
    top = float(walls.max())
    tail = top / p50 if p50 > 0 else 1.0
    return StragglerReport(p50, p95, top, tail, timeline)


@dataclass
class RunReport:
    tasks: list[TaskMetrics]
    run_time: float
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def executor_time(self) -> float:
        return math.fsum(m.wall_time for m in self.tasks)

    @property
    def cpu_time(self) -> float:
        return math.fsum(m.cpu_time for m in self.tasks)

    @property
    def read_time(self) -> float:
        return self.executor_time - self.cpu_time

    @property
    def bytes_read(self) -> int:
        return sum(m.bytes_read for m in self.tasks)

    @property
    def events_processed(self) -> int:
        return sum(m.events_processed for m in self.tasks)

    def throughput_summary(self) -> dict:
        """Per-task mean and median throughput, and total bytes over total read time."""
        rates = [r for r in (throughput(m) for m in self.tasks) if r is not None]
        total_read = self.read_time
        return {
            "per_task_mean": float(np.mean(rates)) if rates else None,
            "per_task_median": float(np.median(rates)) if rates else None,
            "total_based": self.bytes_read / total_read if total_read > 0 else None,
        }

    def straggler(self) -> StragglerReport:
        return straggler_report(self)

    def totals(self) -> dict:
        return {
            "executor_time_s": self.executor_time,
            "cpu_time_s": self.cpu_time,
            "read_time_s": self.read_time,
            "run_time_s": self.run_time,
            "bytes_read": self.bytes_read,
            "events_processed": self.events_processed,
        }

    def to_json(self) -> dict:
        s = self.straggler()
        return {
            "label": self.label,
            "tasks": [asdict(m) | {"throughput_Bps": throughput(m)} for m in sorted(self.tasks, key=lambda m: m.task_id)],
            "totals": self.totals(),
            "throughput": self.throughput_summary(),
            "straggler": {"p50_s": s.p50, "p95_s": s.p95, "max_s": s.max, "tail_ratio": s.tail_ratio},
            **self.extra,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task_id", "n_files", "wall_s", "cpu_s", "read_s", "bytes_read", "events", "throughput_Bps"])
        for m in sorted(self.tasks, key=lambda m: m.task_id):
            rate = throughput(m)
            w.writerow([m.task_id, m.n_files, repr(m.wall_time), repr(m.cpu_time), repr(m.read_time),
                        m.bytes_read, m.events_processed, "" if rate is None else repr(rate)])
        w.writerow([])
        for key, value in (
            ("total_executor_time_s", self.executor_time),
            ("total_cpu_time_s", self.cpu_time),
            ("total_read_time_s", self.read_time),
            ("run_time_s", self.run_time),
        ):
            w.writerow([key, repr(value)])
        return buf.getvalue()


def build_report(metrics: Iterable[TaskMetrics], run_time: float, label: str = "") -> RunReport:
    return RunReport(sorted(metrics, key=lambda m: m.task_id), float(run_time), label)


# -- execution --------------------------------------------------------------


@dataclass
class TaskResult:
    task_id: int
    aggregator: str  # serialized, so results travel the same way across threads and processes
    metrics: TaskMetrics


def _needed_branches(task: TaskSpec) -> list[str]:
    names = list(task.branches)
    for n in sorted(spec_fields(task.spec)):
        if n not in names:
            names.append(n)
    return names


def run_task(task: TaskSpec) -> TaskResult:
    """Fill one aggregator over the task's files."""
    clock = TaskClock()
    start = time.monotonic()
    agg = zero(task.spec)
    bytes_read = events = 0
    with clock.activate():
        for f in task.files:
            try:
                with open_source(f.path) as source:
                    schema = read_schema(source)
                    check_spec(task.spec, schema.types)
                    for batch in read_events(source, _needed_branches(task), task.predicate, schema=schema):
                        fill_batch(agg, batch)
                    bytes_read += source.bytes_read
                    events += schema.event_count
            except (NtuplexError, OSError) as exc:
                code = getattr(exc, "exit_code", 1)
                raise TaskFailedError(task.task_id, f.path, str(exc), code) from None
    end = time.monotonic()
    wall = end - start
    cpu = min(clock.cpu_time, wall)
    metrics = TaskMetrics(task.task_id, wall, cpu, bytes_read=bytes_read, events_processed=events,
                          n_files=len(task.files), start_s=start, end_s=end)
    return TaskResult(task.task_id, serialize(agg), metrics)


def run(plan: Sequence[TaskSpec], workers: int = 1, pool: str = "process"):
    """Execute ``plan`` on at most ``workers`` concurrent workers.

    Returns ``(merged aggregator, RunReport)``. The merge is a left fold in
    ascending task id, so for a fixed plan the result does not depend on
    scheduling. The first failing task aborts the run with
    :class:`TaskFailedError`, whose ``partial_report`` covers finished tasks.
    """
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise UserInputError(f"workers must be a positive integer, got {workers!r}")
    if not plan:
        raise UserInputError("empty plan")
    spec = plan[0].spec
    if spec is None or any(t.spec != spec for t in plan):
        raise UserInputError("all tasks of a plan must share one aggregator spec")
    if pool not in ("process", "thread"):
        raise UserInputError(f"pool must be 'process' or 'thread', got {pool!r}")

    origin = time.monotonic()
    results: list[TaskResult] = []
    failure: TaskFailedError | None = None
    if workers == 1:
        for task in plan:
            try:
                results.append(run_task(task))
            except TaskFailedError as exc:
                failure = exc
                break
    else:
        executor_cls = ProcessPoolExecutor if pool == "process" else ThreadPoolExecutor
        with executor_cls(max_workers=workers) as ex:
            pending = {ex.submit(run_task, t) for t in plan}
            while pending and failure is None:
                done, pending = wait(pending, return_when=FIRST_EXCEPTION)
                for fut in done:
                    exc = fut.exception()
                    if exc is None:
                        results.append(fut.result())
                    elif failure is None:
                        failure = exc if isinstance(exc, TaskFailedError) else TaskFailedError(-1, None, repr(exc))
            for fut in pending:
                fut.cancel()
    run_time = time.monotonic() - origin

    metrics = []
    for r in results:
        m = r.metrics
        m.start_s -= origin
        m.end_s -= origin
        metrics.append(m)
    report = build_report(metrics, run_time)
    if failure is not None:
        failure.partial_report = report
        raise failure

    merged = zero(spec)
    for r in sorted(results, key=lambda r: r.task_id):
        merged = merge(merged, deserialize(r.aggregator))
    log.info("ran %d tasks on %d %s workers in %.3f s", len(plan), workers, pool, run_time)
    return merged, report


# -- simulated cost ---------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Deterministic task cost: compute and transfer time proportional to bytes,
    plus a fixed latency per read request of ``read_block`` bytes."""

    cpu_per_byte: float = 1e-8
    read_per_byte: float = 1 / 70e6
    latency_per_read: float = 0.0
    read_block: int = 65536

    def file_cost(self, size: int) -> tuple[float, float]:
        reads = math.ceil(size / self.read_block) if size else 0
        return size * self.cpu_per_byte, size * self.read_per_byte + reads * self.latency_per_read


def simulate(plan: Sequence[TaskSpec], workers: int | None = None, model: CostModel = CostModel(),
             label: str = "") -> RunReport:
    """RunReport for ``plan`` under ``model`` without touching any data.

    Tasks are started in task-id order on whichever worker frees up first.
    """
    workers = len(plan) if workers is None else workers
    if workers < 1:
        raise UserInputError("workers must be positive")
    free = [(0.0, w) for w in range(workers)]
    metrics = []
    for task in sorted(plan, key=lambda t: t.task_id):
        cpu = read = 0.0
        for f in task.files:
            c, r = model.file_cost(f.size)
            cpu += c
            read += r
        at, w = heapq.heappop(free)
        wall = cpu + read
        metrics.append(TaskMetrics(task.task_id, wall, cpu, read, task.load, 0, len(task.files), at, at + wall))
        heapq.heappush(free, (at + wall, w))
    run_time = max((m.end_s for m in metrics), default=0.0)
    return build_report(metrics, run_time, label)


# -- inputs -----------------------------------------------------------------


def resolve_inputs(patterns: Sequence[str]) -> list[InputFile]:
    """Expand local globs and remote URLs into files with sizes.

    A remote URL ending in ``/`` lists that directory's ``*.ntf`` files.
    """
    from .remotefs import RemoteClient, parse_url

    out: list[InputFile] = []
    for pattern in patterns:
        if is_remote(pattern):
            host, port, path = parse_url(pattern)
            with RemoteClient(host, port) as client:
                if pattern.endswith("/"):
                    for e in client.list(path):
                        if not e.is_dir and e.name.endswith(".ntf"):
                            out.append(InputFile(f"{pattern}{e.name}", e.size))
                else:
                    out.append(InputFile(pattern, client.stat(path)))
            continue
        matches = sorted(glob.glob(pattern)) if glob.has_magic(pattern) else [pattern]
        if os.path.isdir(pattern):
            matches = sorted(glob.glob(os.path.join(pattern, "*.ntf")))
        if not matches:
            raise UserInputError(f"no input files match {pattern!r}")
        for m in matches:
            try:
                out.append(InputFile(m, os.path.getsize(m)))
            except OSError as exc:
                raise UserInputError(f"{m}: {exc.strerror}") from None
    if not out:
        raise UserInputError("no input files")
    return out
