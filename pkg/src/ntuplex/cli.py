"""``ntuplex`` command line.

Exit statuses: 0 success, 1 I/O error, 2 bad user input, 3 corrupt or
unreadable data, 4 remote or protocol error. Failures print one line
``error[<category>]: <message>`` on stderr. ``NTUPLEX_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields

from .aggregate import (
    AggregatorSpec,
    Bin,
    check_spec,
    plot_table_csv,
    serialize,
    spec_from_json,
)
from .errors import NtuplexError, TaskFailedError, UserInputError
from .eventfmt import DEFAULT_BASKET_BYTES, HEADER_SIZE, open_source, read_schema
from .executor import (
    CostModel,
    InputFile,
    RunReport,
    Strategy,
    partition,
    resolve_inputs,
    run,
    simulate,
)
from .expr import check_predicate, parse_expr

log = logging.getLogger("ntuplex")

CATEGORIES = {1: "io", 2: "input", 3: "corruption", 4: "remote"}


# -- analysis configuration -------------------------------------------------


@dataclass
class AnalysisConfig:
    inputs: list[str] = field(default_factory=list)
    spec: AggregatorSpec | None = None
    branches: list[str] = field(default_factory=list)
    predicate: str | None = None
    n_tasks: int | None = None  # default: one task per input file
    workers: int = 1
    strategy: str = "equal"
    pool: str = "process"
    out_dir: str = "."

    @classmethod
    def from_sources(cls, config_path: str | None, overrides: dict) -> AnalysisConfig:
        """Merge a JSON config file with command line values (the latter win)."""
        doc: dict = {}
        if config_path:
            try:
                with open(config_path) as fh:
                    doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UserInputError(f"{config_path}: invalid JSON: {exc}") from None
            if not isinstance(doc, dict):
                raise UserInputError(f"{config_path}: config must be a JSON object")
            known = {f.name for f in fields(cls)}
            unknown = sorted(set(doc) - known)
            if unknown:
                raise UserInputError(f"{config_path}: unknown config keys {unknown}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        if isinstance(doc.get("inputs"), str):
            doc["inputs"] = [doc["inputs"]]
        spec = doc.get("spec")
        if spec is not None and not isinstance(spec, (dict, str)) and not hasattr(spec, "kind"):
            raise UserInputError("spec must be an aggregator spec JSON object")
        if isinstance(spec, (dict, str)):
            doc["spec"] = spec_from_json(spec)
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.inputs:
            raise UserInputError("no inputs given")
        if self.spec is None:
            raise UserInputError("no aggregator spec given")
        for name in ("workers", "n_tasks"):
            value = getattr(self, name)
            if value is None and name == "n_tasks":
                continue
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise UserInputError(f"{name} must be a positive integer, got {value!r}")
        Strategy.parse(self.strategy)
        if self.pool not in ("process", "thread"):
            raise UserInputError(f"pool must be process or thread, got {self.pool!r}")
        if self.predicate is not None:
            parse_expr(self.predicate)
        if not isinstance(self.branches, list) or not all(isinstance(b, str) for b in self.branches):
            raise UserInputError("branches must be a list of names")


def _load_spec_arg(text: str | None):
    if text is None:
        return None
    if text.startswith("@"):
        with open(text[1:]) as fh:
            text = fh.read()
    return spec_from_json(text)


def _check_inputs(files: list[InputFile], cfg: AnalysisConfig) -> None:
    """Type-check the predicate and spec against the first file before running."""
    with open_source(files[0].path) as src:
        types = read_schema(src).types
    if cfg.predicate is not None:
        check_predicate(parse_expr(cfg.predicate), types)
    check_spec(cfg.spec, types)
    missing = [b for b in cfg.branches if b not in types]
    if missing:
        raise UserInputError(f"unknown branches {missing}")


def _write(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def run_analysis(cfg: AnalysisConfig, files: list[InputFile] | None = None):
    files = files if files is not None else resolve_inputs(cfg.inputs)
    _check_inputs(files, cfg)
    n_tasks = cfg.n_tasks or len(files)
    plan = partition(files, n_tasks, cfg.strategy, spec=cfg.spec, predicate=cfg.predicate, branches=cfg.branches)
    return run(plan, cfg.workers, cfg.pool)


def write_outputs(out_dir: str, agg, report: RunReport) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        _write(path, text)
        written.append(path)

    if isinstance(agg, Bin):
        emit("histogram.csv", plot_table_csv(agg))
    emit("aggregator.json", serialize(agg) + "\n")
    emit("report.json", json.dumps(report.to_json(), indent=2) + "\n")
    emit("report.csv", report.to_csv())
    emit("timeline.csv", report.straggler().timeline_csv())
    return written


# -- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    from .synth import DEFAULT_SCHEMA, GenSpec, generate, parse_schema_text

    schema = parse_schema_text(args.schema) if args.schema is not None else parse_schema_text(
        ",".join(f"{k}:{v}" for k, v in DEFAULT_SCHEMA.items()))
    spec = GenSpec(schema, args.files, args.events, args.skew, args.seed, args.mean_len,
                   args.compression, args.basket_bytes, args.prefix)
    for path in generate(args.out_dir, spec):
        print(f"{path}\t{os.path.getsize(path)}")
    return 0


def format_schema(schema, show_baskets: bool = False) -> str:
    lines = [
        f"format: NTF version 1, header {HEADER_SIZE} bytes",
        f"events: {schema.event_count}",
        f"branches: {len(schema.branches)}",
        f"{'name':<20} {'type':<7} {'baskets':>8} {'stored':>12} {'raw':>12}",
    ]
    for b in schema.branches:
        raw = sum(k.uncompressed_size for k in b.baskets)
        lines.append(f"{b.name:<20} {b.branch_type.value:<7} {len(b.baskets):>8} {b.stored_bytes:>12} {raw:>12}")
        if show_baskets:
            for i, k in enumerate(b.baskets):
                lines.append(
                    f"  [{i}] offset={k.file_offset} csize={k.compressed_size} usize={k.uncompressed_size}"
                    f" events={k.event_count} crc32={k.checksum:08x}"
                )
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    with open_source(args.path) as src:
        schema = read_schema(src)
    if args.json:
        sys.stdout.write(json.dumps(schema.to_json(), indent=2) + "\n")
    else:
        sys.stdout.write(format_schema(schema, args.baskets))
    return 0


def cmd_skim(args) -> int:
    from .pipeline import skim

    counts = skim(args.input, args.predicate, args.output, args.compression, args.basket_bytes)
    print(f"events_in={counts.events_in} events_out={counts.events_out}")
    return 0


def cmd_slim(args) -> int:
    from .pipeline import slim

    keep = [b.strip() for b in args.keep.split(",") if b.strip()]
    schema = slim(args.input, keep, args.output, args.compression, args.basket_bytes)
    print(f"events={schema.event_count} branches={','.join(schema.names)}")
    return 0


def _analysis_overrides(args) -> dict:
    return {
        "inputs": args.inputs or None,
        "spec": _load_spec_arg(args.spec),
        "branches": [b for b in args.branches.split(",") if b] if args.branches else None,
        "predicate": args.predicate,
        "n_tasks": args.n_tasks,
        "workers": args.workers,
        "strategy": args.strategy,
        "pool": args.pool,
        "out_dir": getattr(args, "out_dir", None),
    }


def cmd_analyze(args) -> int:
    cfg = AnalysisConfig.from_sources(args.config, _analysis_overrides(args))
    agg, report = run_analysis(cfg)
    for path in write_outputs(cfg.out_dir, agg, report):
        print(path)
    t = report.totals()
    print(f"events={t['events_processed']} bytes={t['bytes_read']} run_time_s={t['run_time_s']:.3f}")
    return 0


def _bench_row(transport: str, strategy: str, report: RunReport) -> dict:
    s = report.straggler()
    return {
        "transport": transport,
        "strategy": strategy,
        "makespan_s": report.run_time,
        "executor_s": report.executor_time,
        "cpu_s": report.cpu_time,
        "read_s": report.read_time,
        "p50_s": s.p50,
        "p95_s": s.p95,
        "max_s": s.max,
        "tail_ratio": s.tail_ratio,
    }


def format_bench_table(rows: list[dict]) -> str:
    cols = ["transport", "strategy", "makespan_s", "executor_s", "cpu_s", "read_s", "p50_s", "p95_s", "max_s", "tail_ratio"]
    out = ["  ".join(f"{c:>11}" for c in cols)]
    for r in rows:
        out.append("  ".join(f"{r[c]:>11}" if isinstance(r[c], str) else f"{r[c]:>11.4f}" for c in cols))
    return "\n".join(out) + "\n"


def cmd_bench(args) -> int:
    from .remotefs import serve

    cfg = AnalysisConfig.from_sources(args.config, _analysis_overrides(args))
    if args.repetitions < 1:
        raise UserInputError("repetitions must be positive")
    local = resolve_inputs(cfg.inputs)
    if any(f.path.startswith("ntx://") for f in local):
        raise UserInputError("bench takes local inputs; it serves them itself for the remote runs")
    n_tasks = cfg.n_tasks or len(local)
    os.makedirs(cfg.out_dir, exist_ok=True)
    server = None
    transports = {"local": local}
    if not args.no_remote:
        if args.simulate:
            transports["remote"] = local
        else:
            root = os.path.commonpath([os.path.dirname(os.path.abspath(f.path)) for f in local])
            server = serve(root, read_latency=args.latency)
            transports["remote"] = [
                InputFile(server.url(os.path.relpath(os.path.abspath(f.path), root)), f.size) for f in local
            ]
    models = {
        "local": CostModel(),
        "remote": CostModel(read_per_byte=1 / 25e6, latency_per_read=args.latency or 1e-3),
    }
    try:
        if not args.simulate:
            _check_inputs(local, cfg)
        for rep in range(args.repetitions):
            rows, reports = [], []
            for transport, files in transports.items():
                for strategy in ("equal", "lpt"):
                    plan = partition(files, n_tasks, strategy, spec=cfg.spec, predicate=cfg.predicate,
                                     branches=cfg.branches)
                    if args.simulate:
                        report = simulate(plan, cfg.workers, models[transport])
                    else:
                        _, report = run(plan, cfg.workers, cfg.pool)
                    report.label = f"{transport}/{strategy}"
                    rows.append(_bench_row(transport, strategy, report))
                    reports.append(report.to_json())
            path = os.path.join(cfg.out_dir, f"bench_rep{rep}.json")
            _write(path, json.dumps({"repetition": rep, "simulated": args.simulate, "table": rows,
                                     "reports": reports}, indent=2) + "\n")
            print(f"repetition {rep}: {path}")
            sys.stdout.write(format_bench_table(rows))
    finally:
        if server is not None:
            server.shutdown()
    return 0


def cmd_serve(args) -> int:
    from .remotefs import StorageServer

    host, _, port = args.address.rpartition(":")
    try:
        address = (host or "127.0.0.1", int(port))
    except ValueError:
        raise UserInputError(f"bad address {args.address!r}, expected host:port") from None
    server = StorageServer(args.root, address, args.latency)
    h, p = server.address
    print(f"serving {os.path.abspath(args.root)} at ntx://{h}:{p}/", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


# -- argument parsing -------------------------------------------------------


def _add_write_options(p) -> None:
    p.add_argument("--compression", choices=("deflate", "none"), default="deflate")
    p.add_argument("--basket-bytes", type=int, default=DEFAULT_BASKET_BYTES, help="basket target size")


def _add_analysis_options(p) -> None:
    p.add_argument("inputs", nargs="*", help="files, globs, directories or ntx:// URLs")
    p.add_argument("--config", help="JSON file with analysis settings; flags override it")
    p.add_argument("--spec", help="aggregator spec as JSON text, or @file")
    p.add_argument("--predicate", help="event selection expression")
    p.add_argument("--branches", help="comma separated extra branches to read")
    p.add_argument("--n-tasks", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--strategy", choices=("equal", "lpt"))
    p.add_argument("--pool", choices=("process", "thread"))
    p.add_argument("--out-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntuplex", description="Columnar event files, skims and histogram analyses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--files", type=int, default=4)
    p.add_argument("--events", type=int, default=1000, help="mean events per file")
    p.add_argument("--skew", type=float, default=0.0, help="file size skew, 0 for equal files")
    p.add_argument("--schema", help="name:type list, e.g. pt:F32,jets:VarF32")
    p.add_argument("--mean-len", type=float, default=3.0, help="mean VarF32 array length")
    p.add_argument("--prefix", default="part")
    _add_write_options(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("inspect", help="print a file's schema and basket index")
    p.add_argument("path")
    p.add_argument("--baskets", action="store_true", help="list every basket")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("skim", help="copy the events passing a predicate")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--predicate", required=True)
    _add_write_options(p)
    p.set_defaults(func=cmd_skim)

    p = sub.add_parser("slim", help="copy a subset of branches")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--keep", required=True, help="comma separated branch names")
    _add_write_options(p)
    p.set_defaults(func=cmd_slim)

    p = sub.add_parser("analyze", help="fill an aggregator over many files in parallel")
    _add_analysis_options(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="compare local and remote runs under both partition strategies")
    _add_analysis_options(p)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--latency", type=float, default=0.0, help="extra seconds per remote READ")
    p.add_argument("--simulate", action="store_true", help="use the cost model instead of reading data")
    p.add_argument("--no-remote", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="export a directory over the ntx protocol")
    p.add_argument("root")
    p.add_argument("--address", default="127.0.0.1:7070", help="host:port")
    p.add_argument("--latency", type=float, default=0.0, help="extra seconds per READ")
    p.set_defaults(func=cmd_serve)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("NTUPLEX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        code = args.func(args)
    except TaskFailedError as exc:
        print(f"error[{CATEGORIES.get(exc.exit_code, 'error')}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except NtuplexError as exc:
        print(f"error[{CATEGORIES.get(exc.exit_code, 'error')}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.3f s", args.command, time.monotonic() - started)
    return code
