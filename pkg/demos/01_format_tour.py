"""A tour of the NTF file layout.

Writes a small three-branch file, prints its basket index, then shows how
much of the file a pruned read actually touches.

    python3 demos/01_format_tour.py
"""

import tempfile
from pathlib import Path

import numpy as np

from ntuplex.cli import format_schema
from ntuplex.eventfmt import FileSource, Schema, VarColumn, read_events, read_schema, write_columns

rng = np.random.default_rng(2024)
n = 50_000
schema = Schema.declare({"run": "I64", "pt": "F32", "hits": "VarF32"})
columns = {
    "run": np.repeat(np.arange(5, dtype=np.int64), n // 5),
    "pt": rng.exponential(25.0, n).astype(np.float32),
    "hits": VarColumn.from_lists(rng.normal(0, 1, int(k)).astype(np.float32) for k in rng.poisson(12, n)),
}

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tour.ntf"
    write_columns(path, schema, columns)
    size = path.stat().st_size
    print(f"wrote {path.name}: {n} events, {size} bytes\n")

    with FileSource(path) as src:
        print(format_schema(read_schema(src)))
        print(f"reading the schema cost {src.bytes_read} bytes (header + footer)\n")

    # The run branch is constant over long stretches and compresses to almost nothing;
    # the jagged hits branch dominates the file.
    for selection, predicate in ((["pt"], None), (["pt"], "run == 3"), (["pt", "hits"], "pt > 100")):
        with FileSource(path) as src:
            rows = sum(batch.row_count for batch in read_events(src, selection, predicate))
            used = src.bytes_read
        print(f"select {selection!s:<16} where {predicate!s:<10} -> {rows:>6} rows, "
              f"{used:>8} bytes read ({used / size:.1%} of the file)")
