"""Columnar event files, skim/slim pipelines and mergeable histogram analyses."""

from .aggregate import (
    AverageSpec,
    BinSpec,
    CountSpec,
    DeviateSpec,
    SumSpec,
    deserialize,
    fill,
    fill_columns,
    merge,
    plot_table_csv,
    serialize,
    to_plot_table,
    zero,
)
from .errors import (
    CorruptionError,
    ExprSyntaxError,
    FormatError,
    NtuplexError,
    RemoteError,
    SchemaError,
    TaskFailedError,
    UserInputError,
)
from .eventfmt import BranchType, Schema, VarColumn, open_source, read_events, read_schema, write_columns, write_dataset
from .executor import RunReport, TaskMetrics, build_report, partition, run, simulate
from .expr import evaluate, parse_expr
from .pipeline import skim, slim

__all__ = [
    "AverageSpec",
    "BinSpec",
    "BranchType",
    "build_report",
    "CorruptionError",
    "CountSpec",
    "deserialize",
    "DeviateSpec",
    "evaluate",
    "ExprSyntaxError",
    "fill",
    "fill_columns",
    "FormatError",
    "merge",
    "NtuplexError",
    "open_source",
    "parse_expr",
    "partition",
    "plot_table_csv",
    "read_events",
    "read_schema",
    "RemoteError",
    "run",
    "RunReport",
    "Schema",
    "SchemaError",
    "serialize",
    "simulate",
    "skim",
    "slim",
    "SumSpec",
    "TaskFailedError",
    "TaskMetrics",
    "to_plot_table",
    "UserInputError",
    "VarColumn",
    "write_columns",
    "write_dataset",
    "zero",
]

__version__ = "0.1.0"
